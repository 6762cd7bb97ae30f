#include "mogen/checkpoint.hpp"

#include "mogen/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mogen {

namespace {

constexpr char kMagic[5] = {'M', 'G', 'C', 'K', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    out.insert(out.end(), c, c + n);
  }
  template <class T>
  void le(T v) {
    static_assert(std::endian::native == std::endian::little, "little-endian host expected");
    bytes(&v, sizeof v);
  }
  std::vector<unsigned char> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : buf(b) {}
  void need(std::size_t n, const char* what) const {
    if (pos + n > buf.size()) {
      throw FormatError(FormatError::Kind::Truncated, pos, std::string("checkpoint truncated while reading ") + what);
    }
  }
  template <class T>
  T le(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof v);
    pos += sizeof v;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  const std::vector<unsigned char>& buf;
  std::size_t pos = 0;
};

}  // namespace

const Blob* Checkpoint::find(const std::string& name) const {
  for (const auto& b : blobs) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  const std::string header = ck.header.dump();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(header.size()));
  w.bytes(header.data(), header.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ck.blobs.size()));
  for (const auto& b : ck.blobs) {
    if (ag::numel(b.shape) != static_cast<std::int64_t>(b.values.size())) {
      throw DataError("checkpoint blob " + b.name + " has " + std::to_string(b.values.size()) + " values for shape " +
                      ag::to_string(b.shape));
    }
    w.le<std::uint32_t>(static_cast<std::uint32_t>(b.name.size()));
    w.bytes(b.name.data(), b.name.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) w.le<std::uint64_t>(static_cast<std::uint64_t>(d));
    for (float v : b.values) w.le<float>(v);
  }
  return std::move(w.out);
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  Reader r(bytes);
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError(FormatError::Kind::MalformedHeader, 0, "not a checkpoint (bad magic)");
  }
  r.pos = sizeof kMagic;
  Checkpoint ck;
  const auto hlen = r.le<std::uint32_t>("header length");
  const std::size_t hstart = r.pos;
  const std::string header = r.str(hlen, "header");
  try {
    ck.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::MalformedHeader, hstart, std::string("checkpoint header: ") + e.what());
  }
  const auto count = r.le<std::uint32_t>("blob count");
  for (std::uint32_t i = 0; i < count; ++i) {
    Blob b;
    b.name = r.str(r.le<std::uint32_t>("blob name length"), "blob name");
    const std::size_t at = r.pos;
    const auto rank = r.le<std::uint32_t>("blob rank");
    if (rank > 8) throw FormatError(FormatError::Kind::DimensionMismatch, at, "blob " + b.name + " has rank > 8");
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.le<std::uint64_t>("blob dims");
      b.shape.push_back(static_cast<std::int64_t>(d));
      n *= d;
    }
    r.need(n * sizeof(float), "blob values");
    b.values.resize(n);
    std::memcpy(b.values.data(), bytes.data() + r.pos, n * sizeof(float));
    r.pos += n * sizeof(float);
    ck.blobs.push_back(std::move(b));
  }
  return ck;
}

void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void store_parameters(Checkpoint& ck, const std::string& prefix, const nn::ParameterSet& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Blob b;
    b.name = prefix + ps.name(i);
    b.shape = ps[i].shape();
    b.values.assign(ps[i].values().begin(), ps[i].values().end());
    ck.blobs.push_back(std::move(b));
  }
}

void load_parameters(const Checkpoint& ck, const std::string& prefix, nn::ParameterSet& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const std::string name = prefix + ps.name(i);
    const Blob* b = ck.find(name);
    if (b == nullptr) throw DataError("checkpoint has no parameter " + name);
    if (b->shape != ps[i].shape()) {
      throw DataError("checkpoint parameter " + name + " has shape " + ag::to_string(b->shape) + ", model expects " +
                      ag::to_string(ps[i].shape()));
    }
    auto dst = ps[i].mutable_values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = b->values[k];
  }
}

// ---------------------------------------------------------------------------
// Configuration documents

nlohmann::json to_json(const GeneratorConfig& c) {
  return {{"latent_channels", c.latent_channels}, {"width", c.width},
          {"heads", c.heads},                     {"layer_pairs", c.layer_pairs},
          {"class_count", c.class_count},         {"persons", c.persons},
          {"frames", c.frames},                   {"joints", c.joints},
          {"representation", std::string(representation_name(c.representation))},
          {"mlp_ratio", c.mlp_ratio},             {"fixed_pe", c.fixed_pe},
          {"shared_latent", c.shared_latent}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  try {
    GeneratorConfig c;
    c.latent_channels = j.at("latent_channels");
    c.width = j.at("width");
    c.heads = j.at("heads");
    c.layer_pairs = j.at("layer_pairs");
    c.class_count = j.at("class_count");
    c.persons = j.at("persons");
    c.frames = j.at("frames");
    c.joints = j.at("joints");
    c.representation = parse_representation(j.at("representation").get<std::string>());
    c.mlp_ratio = j.at("mlp_ratio");
    c.fixed_pe = j.at("fixed_pe");
    c.shared_latent = j.at("shared_latent");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("generator config: ") + e.what());
  }
}

nlohmann::json to_json(const StgcnConfig& c) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : c.stages) {
    stages.push_back({{"in", s.in_channels},
                      {"out", s.out_channels},
                      {"spatial_kernel", s.spatial_kernel},
                      {"temporal_kernel", s.temporal_kernel},
                      {"temporal_stride", s.temporal_stride},
                      {"level", s.level},
                      {"coarsen", s.coarsen}});
  }
  return {{"stages", stages},
          {"leaky_slope", c.leaky_slope},
          {"batch_norm", c.batch_norm},
          {"norm_momentum", c.norm_momentum}};
}

StgcnConfig stgcn_config_from_json(const nlohmann::json& j) {
  try {
    StgcnConfig c;
    for (const auto& s : j.at("stages")) {
      GraphStage g;
      g.in_channels = s.at("in");
      g.out_channels = s.at("out");
      g.spatial_kernel = s.at("spatial_kernel");
      g.temporal_kernel = s.at("temporal_kernel");
      g.temporal_stride = s.at("temporal_stride");
      g.level = s.at("level");
      g.coarsen = s.at("coarsen");
      c.stages.push_back(g);
    }
    c.leaky_slope = j.at("leaky_slope");
    c.batch_norm = j.at("batch_norm");
    c.norm_momentum = j.at("norm_momentum");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("graph network config: ") + e.what());
  }
}

nlohmann::json to_json(const DiscriminatorConfig& c) {
  return {{"backbone", to_json(c.backbone)},
          {"class_count", c.class_count},
          {"persons", c.persons},
          {"joints", c.joints},
          {"representation", std::string(representation_name(c.representation))}};
}

DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j) {
  try {
    DiscriminatorConfig c;
    c.backbone = stgcn_config_from_json(j.at("backbone"));
    c.class_count = j.at("class_count");
    c.persons = j.at("persons");
    c.joints = j.at("joints");
    c.representation = parse_representation(j.at("representation").get<std::string>());
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("discriminator config: ") + e.what());
  }
}

nlohmann::json to_json(const RecognizerConfig& c) {
  return {{"backbone", to_json(c.backbone)},
          {"class_count", c.class_count},
          {"persons", c.persons},
          {"joints", c.joints},
          {"representation", std::string(representation_name(c.representation))},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"permute_persons", c.permute_persons},
          {"seed", c.seed}};
}

RecognizerConfig recognizer_config_from_json(const nlohmann::json& j) {
  try {
    RecognizerConfig c;
    c.backbone = stgcn_config_from_json(j.at("backbone"));
    c.class_count = j.at("class_count");
    c.persons = j.at("persons");
    c.joints = j.at("joints");
    c.representation = parse_representation(j.at("representation").get<std::string>());
    c.epochs = j.at("epochs");
    c.batch_size = j.at("batch_size");
    c.learning_rate = j.at("learning_rate");
    c.momentum = j.at("momentum");
    c.weight_decay = j.at("weight_decay");
    c.permute_persons = j.at("permute_persons");
    c.seed = j.at("seed");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("recognizer config: ") + e.what());
  }
}

nlohmann::json to_json(const GPConfig& c) {
  return {{"channels", c.channels},
          {"length", c.length},
          {"length_scale_min", c.length_scale_min},
          {"length_scale_max", c.length_scale_max},
          {"jitter", c.jitter}};
}

GPConfig gp_config_from_json(const nlohmann::json& j) {
  try {
    GPConfig c;
    c.channels = j.at("channels");
    c.length = j.at("length");
    c.length_scale_min = j.at("length_scale_min");
    c.length_scale_max = j.at("length_scale_max");
    c.jitter = j.at("jitter");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("latent prior config: ") + e.what());
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"batch_size", c.batch_size},
          {"d_steps_per_g", c.d_steps_per_g},
          {"epochs", c.epochs},
          {"max_iterations", c.max_iterations},
          {"gradient_penalty_weight", c.gradient_penalty_weight},
          {"clip_value", c.clip_value},
          {"seed", c.seed},
          {"prior", std::string(prior_name(c.prior))},
          {"permute_persons", c.permute_persons},
          {"divergence_threshold", c.divergence_threshold}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig c;
    c.learning_rate = j.at("learning_rate");
    c.adam_beta1 = j.at("adam_beta1");
    c.adam_beta2 = j.at("adam_beta2");
    c.batch_size = j.at("batch_size");
    c.d_steps_per_g = j.at("d_steps_per_g");
    c.epochs = j.at("epochs");
    c.max_iterations = j.at("max_iterations");
    c.gradient_penalty_weight = j.at("gradient_penalty_weight");
    c.clip_value = j.at("clip_value");
    c.seed = j.at("seed");
    c.prior = parse_prior(j.at("prior").get<std::string>());
    c.permute_persons = j.at("permute_persons");
    c.divergence_threshold = j.at("divergence_threshold");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("training config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Models

namespace {

void expect_kind(const Checkpoint& ck, const std::string& kind) {
  const auto it = ck.header.find("kind");
  if (it == ck.header.end() || !it->is_string() || it->get<std::string>() != kind) {
    throw DataError("checkpoint is not a " + kind + " checkpoint");
  }
}

void store_moments(Checkpoint& ck, const std::string& prefix, const nn::ParameterSet& ps, nn::Adam& opt) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (int which = 0; which < 2; ++which) {
      const auto& src = which == 0 ? opt.first_moments()[i] : opt.second_moments()[i];
      Blob b;
      b.name = prefix + (which == 0 ? "m." : "v.") + ps.name(i);
      b.shape = ps[i].shape();
      b.values.assign(src.begin(), src.end());
      ck.blobs.push_back(std::move(b));
    }
  }
}

void load_moments(const Checkpoint& ck, const std::string& prefix, const nn::ParameterSet& ps, nn::Adam& opt) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (int which = 0; which < 2; ++which) {
      const std::string name = prefix + (which == 0 ? "m." : "v.") + ps.name(i);
      const Blob* b = ck.find(name);
      if (b == nullptr || b->shape != ps[i].shape()) throw DataError("checkpoint optimiser state " + name + " missing or misshaped");
      auto& dst = which == 0 ? opt.first_moments()[i] : opt.second_moments()[i];
      dst.assign(b->values.begin(), b->values.end());
    }
  }
}

}  // namespace

void save_generator(const std::filesystem::path& path, const Generator& gen, LatentPrior prior, const GPConfig& gp,
                    const nlohmann::json& extra) {
  Checkpoint ck;
  ck.header = {{"kind", "generator"},
               {"generator", to_json(gen.config())},
               {"prior", std::string(prior_name(prior))},
               {"gp", to_json(gp)},
               {"extra", extra}};
  store_parameters(ck, "", gen.params());
  write_checkpoint(ck, path);
}

GeneratorBundle load_generator(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  expect_kind(ck, "generator");
  GeneratorBundle out;
  Rng rng(0);
  out.generator = Generator(generator_config_from_json(ck.header.at("generator")), rng);
  load_parameters(ck, "", out.generator.params());
  out.prior = parse_prior(ck.header.at("prior").get<std::string>());
  out.gp = gp_config_from_json(ck.header.at("gp"));
  out.extra = ck.header.value("extra", nlohmann::json::object());
  return out;
}

void save_recognizer(const std::filesystem::path& path, const Recognizer& rec, const nlohmann::json& extra) {
  Checkpoint ck;
  ck.header = {{"kind", "recognizer"}, {"recognizer", to_json(rec.config())}, {"extra", extra}};
  store_parameters(ck, "", rec.params());
  store_parameters(ck, "running.", rec.running());
  write_checkpoint(ck, path);
}

Recognizer load_recognizer(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  expect_kind(ck, "recognizer");
  const auto cfg = recognizer_config_from_json(ck.header.at("recognizer"));
  Rng rng(0);
  Recognizer rec(cfg, SkeletonTopology::for_joint_count(cfg.joints), rng);
  load_parameters(ck, "", rec.params());
  load_parameters(ck, "running.", rec.running());
  return rec;
}

void save_training_state(const std::filesystem::path& path, GanTrainer& trainer, const GPConfig& gp,
                         const nlohmann::json& extra) {
  Checkpoint ck;
  ck.header = {{"kind", "training_state"},
               {"generator", to_json(trainer.generator().config())},
               {"discriminator", to_json(trainer.discriminator().config())},
               {"gp", to_json(gp)},
               {"train", to_json(trainer.train_config())},
               {"iteration", trainer.iteration()},
               {"generator_steps", trainer.generator_optimizer().steps()},
               {"discriminator_steps", trainer.discriminator_optimizer().steps()},
               {"random_state", trainer.random_state()},
               {"log", trainer.log().to_csv()},
               {"extra", extra}};
  store_parameters(ck, "generator.", trainer.generator().params());
  store_parameters(ck, "discriminator.", trainer.discriminator().params());
  store_moments(ck, "adam.generator.", trainer.generator().params(), trainer.generator_optimizer());
  store_moments(ck, "adam.discriminator.", trainer.discriminator().params(), trainer.discriminator_optimizer());
  write_checkpoint(ck, path);
}

void restore_training_state(const std::filesystem::path& path, GanTrainer& trainer) {
  const Checkpoint ck = read_checkpoint(path);
  expect_kind(ck, "training_state");
  if (ck.header.at("generator") != to_json(trainer.generator().config()) ||
      ck.header.at("discriminator") != to_json(trainer.discriminator().config())) {
    throw ConfigError("checkpoint model configuration differs from the current run");
  }
  load_parameters(ck, "generator.", trainer.generator().params());
  load_parameters(ck, "discriminator.", trainer.discriminator().params());
  load_moments(ck, "adam.generator.", trainer.generator().params(), trainer.generator_optimizer());
  load_moments(ck, "adam.discriminator.", trainer.discriminator().params(), trainer.discriminator_optimizer());
  trainer.generator_optimizer().set_steps(ck.header.at("generator_steps"));
  trainer.discriminator_optimizer().set_steps(ck.header.at("discriminator_steps"));
  trainer.set_random_state(ck.header.at("random_state").get<std::string>());
  trainer.set_iteration(ck.header.at("iteration"));
  trainer.mutable_log() = TrainLog::from_csv(ck.header.at("log").get<std::string>());
}

}  // namespace mogen
