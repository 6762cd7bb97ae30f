#include "mogen/config.hpp"

#include "mogen/errors.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

namespace mogen {

namespace pt = boost::property_tree;

namespace {

std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

std::string fmt(bool v) { return v ? "true" : "false"; }

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
  }
  return out;
}

// Typed reads that keep the default when the key is absent and name the key on failure.
class Section {
 public:
  Section(const pt::ptree& tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  template <class T>
  void read(const char* key, T& target) const {
    const auto node = tree_.get_child_optional(name_ + "." + key);
    if (!node) return;
    const std::string raw = node->get_value<std::string>();
    std::istringstream in(raw);
    T v{};
    if constexpr (std::is_same_v<T, bool>) {
      if (raw == "true" || raw == "1") {
        v = true;
      } else if (raw == "false" || raw == "0") {
        v = false;
      } else {
        fail(key, raw);
      }
    } else if constexpr (std::is_same_v<T, std::string>) {
      v = raw;
    } else {
      if (!(in >> v) || !(in >> std::ws).eof()) fail(key, raw);
    }
    target = v;
  }

 private:
  [[noreturn]] void fail(const char* key, const std::string& raw) const {
    throw ConfigError("config: invalid value '" + raw + "' for " + name_ + "." + key);
  }
  const pt::ptree& tree_;
  std::string name_;
};

const std::vector<std::pair<std::string, std::vector<std::string>>>& known_keys() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> keys = {
      {"run", {"seed", "output_dir", "run_id"}},
      {"data",
       {"classes", "per_class", "frames", "joints", "persons", "representation", "pose_noise", "seed", "val_fraction"}},
      {"prior", {"kind", "length_scale_min", "length_scale_max", "jitter"}},
      {"generator", {"latent_channels", "width", "heads", "layer_pairs", "mlp_ratio", "fixed_pe", "shared_latent"}},
      {"discriminator", {"width_scale"}},
      {"train",
       {"learning_rate", "adam_beta1", "adam_beta2", "batch_size", "d_steps_per_g", "epochs", "max_iterations",
        "gradient_penalty_weight", "clip_value", "permute_persons", "checkpoint_every"}},
      {"recognizer",
       {"width_scale", "feature_width", "epochs", "batch_size", "learning_rate", "momentum", "weight_decay",
        "permute_persons"}},
      {"eval", {"per_class", "seed", "batch_size"}},
  };
  return keys;
}

void check_known(const pt::ptree& tree) {
  for (const auto& [section, body] : tree) {
    const auto& keys = known_keys();
    auto it = std::find_if(keys.begin(), keys.end(), [&](const auto& k) { return k.first == section; });
    if (it == keys.end()) throw ConfigError("config: unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      if (std::find(it->second.begin(), it->second.end(), key) == it->second.end()) {
        throw ConfigError("config: unknown key " + section + "." + key);
      }
    }
  }
}

void apply_tree(const pt::ptree& tree, RunConfig& c) {
  check_known(tree);
  Section run(tree, "run");
  run.read("seed", c.seed);
  run.read("output_dir", c.output_dir);
  run.read("run_id", c.run_id);

  Section data(tree, "data");
  std::string classes = join(c.data.classes);
  data.read("classes", classes);
  c.data.classes = split(classes);
  data.read("per_class", c.data.per_class);
  data.read("frames", c.data.frames);
  data.read("joints", c.data.joints);
  const std::int64_t persons_before = c.data.persons;
  data.read("persons", c.data.persons);
  // Switching between single-person and group data without naming classes picks the matching built-ins.
  if ((persons_before == 1) != (c.data.persons == 1) && !tree.get_child_optional("data.classes")) {
    c.data.classes = SynthSpec::with_class_count(c.data.persons == 1 ? 4 : 2, c.data.persons).classes;
  }
  std::string rep(representation_name(c.data.representation));
  data.read("representation", rep);
  c.data.representation = parse_representation(rep);
  data.read("pose_noise", c.data.pose_noise);
  data.read("seed", c.data_seed);
  data.read("val_fraction", c.val_fraction);

  Section prior(tree, "prior");
  std::string kind(prior_name(c.prior));
  prior.read("kind", kind);
  c.prior = parse_prior(kind);
  prior.read("length_scale_min", c.gp.length_scale_min);
  prior.read("length_scale_max", c.gp.length_scale_max);
  prior.read("jitter", c.gp.jitter);

  Section gen(tree, "generator");
  gen.read("latent_channels", c.generator.latent_channels);
  gen.read("width", c.generator.width);
  gen.read("heads", c.generator.heads);
  gen.read("layer_pairs", c.generator.layer_pairs);
  gen.read("mlp_ratio", c.generator.mlp_ratio);
  gen.read("fixed_pe", c.generator.fixed_pe);
  gen.read("shared_latent", c.generator.shared_latent);

  Section disc(tree, "discriminator");
  disc.read("width_scale", c.disc_width_scale);

  Section train(tree, "train");
  train.read("learning_rate", c.train.learning_rate);
  train.read("adam_beta1", c.train.adam_beta1);
  train.read("adam_beta2", c.train.adam_beta2);
  train.read("batch_size", c.train.batch_size);
  train.read("d_steps_per_g", c.train.d_steps_per_g);
  train.read("epochs", c.train.epochs);
  train.read("max_iterations", c.train.max_iterations);
  train.read("gradient_penalty_weight", c.train.gradient_penalty_weight);
  train.read("clip_value", c.train.clip_value);
  train.read("permute_persons", c.train.permute_persons);
  train.read("checkpoint_every", c.checkpoint_every);

  Section rec(tree, "recognizer");
  rec.read("width_scale", c.recognizer_width_scale);
  rec.read("feature_width", c.recognizer_feature_width);
  rec.read("epochs", c.recognizer.epochs);
  rec.read("batch_size", c.recognizer.batch_size);
  rec.read("learning_rate", c.recognizer.learning_rate);
  rec.read("momentum", c.recognizer.momentum);
  rec.read("weight_decay", c.recognizer.weight_decay);
  rec.read("permute_persons", c.recognizer.permute_persons);

  Section ev(tree, "eval");
  ev.read("per_class", c.eval.per_class);
  ev.read("seed", c.eval.seed);
  ev.read("batch_size", c.eval.batch_size);
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.data = SynthSpec::with_class_count(4, 1);
  c.data.per_class = 50;
  c.data.frames = 16;
  c.data.joints = 5;
  c.gp.length_scale_min = 2.0;
  c.gp.length_scale_max = 16.0;
  c.generator.latent_channels = 32;
  c.generator.width = 32;
  c.generator.heads = 4;
  c.generator.layer_pairs = 2;
  c.train.batch_size = 16;
  c.recognizer.epochs = 20;
  c.recognizer.batch_size = 16;
  c.eval.per_class = 100;
  return c;
}

std::string RunConfig::text() const {
  std::ostringstream o;
  o << "[run]\nseed=" << seed << "\noutput_dir=" << output_dir << "\nrun_id=" << run_id << "\n\n";
  o << "[data]\nclasses=" << join(data.classes) << "\nper_class=" << data.per_class << "\nframes=" << data.frames
    << "\njoints=" << data.joints << "\npersons=" << data.persons
    << "\nrepresentation=" << representation_name(data.representation) << "\npose_noise=" << fmt(data.pose_noise)
    << "\nseed=" << data_seed << "\nval_fraction=" << fmt(val_fraction) << "\n\n";
  o << "[prior]\nkind=" << prior_name(prior) << "\nlength_scale_min=" << fmt(gp.length_scale_min)
    << "\nlength_scale_max=" << fmt(gp.length_scale_max) << "\njitter=" << fmt(gp.jitter) << "\n\n";
  o << "[generator]\nlatent_channels=" << generator.latent_channels << "\nwidth=" << generator.width
    << "\nheads=" << generator.heads << "\nlayer_pairs=" << generator.layer_pairs
    << "\nmlp_ratio=" << generator.mlp_ratio << "\nfixed_pe=" << fmt(generator.fixed_pe)
    << "\nshared_latent=" << fmt(generator.shared_latent) << "\n\n";
  o << "[discriminator]\nwidth_scale=" << fmt(disc_width_scale) << "\n\n";
  o << "[train]\nlearning_rate=" << fmt(train.learning_rate) << "\nadam_beta1=" << fmt(train.adam_beta1)
    << "\nadam_beta2=" << fmt(train.adam_beta2) << "\nbatch_size=" << train.batch_size
    << "\nd_steps_per_g=" << train.d_steps_per_g << "\nepochs=" << train.epochs
    << "\nmax_iterations=" << train.max_iterations
    << "\ngradient_penalty_weight=" << fmt(train.gradient_penalty_weight) << "\nclip_value=" << fmt(train.clip_value)
    << "\npermute_persons=" << fmt(train.permute_persons) << "\ncheckpoint_every=" << checkpoint_every << "\n\n";
  o << "[recognizer]\nwidth_scale=" << fmt(recognizer_width_scale) << "\nfeature_width=" << recognizer_feature_width
    << "\nepochs=" << recognizer.epochs << "\nbatch_size=" << recognizer.batch_size
    << "\nlearning_rate=" << fmt(recognizer.learning_rate) << "\nmomentum=" << fmt(recognizer.momentum)
    << "\nweight_decay=" << fmt(recognizer.weight_decay)
    << "\npermute_persons=" << fmt(recognizer.permute_persons) << "\n\n";
  o << "[eval]\nper_class=" << eval.per_class << "\nseed=" << eval.seed << "\nbatch_size=" << eval.batch_size << "\n";
  return o.str();
}

std::string RunConfig::hash() const { return sha256_hex(text()); }

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override must look like section.key=value, got '" + assignment + "'");
  }
  pt::ptree tree;
  tree.put(pt::ptree::path_type(assignment.substr(0, eq), '.'), assignment.substr(eq + 1));
  apply_tree(tree, *this);
}

GeneratorConfig RunConfig::generator_for(const LabeledDataset& data) const {
  const auto& s = data.sequences.at(0);
  GeneratorConfig g = generator;
  g.class_count = data.class_count;
  g.persons = s.persons;
  g.frames = s.frames;
  g.joints = s.joints;
  g.representation = s.representation;
  g.validate();
  return g;
}

DiscriminatorConfig RunConfig::discriminator_for(const LabeledDataset& data) const {
  const auto& s = data.sequences.at(0);
  return DiscriminatorConfig::standard(data.class_count, s.persons, data.topology, s.representation, disc_width_scale);
}

RecognizerConfig RunConfig::recognizer_for(const LabeledDataset& data) const {
  const auto& s = data.sequences.at(0);
  RecognizerConfig r = RecognizerConfig::standard(data.class_count, s.persons, data.topology, s.representation,
                                                  recognizer_width_scale, recognizer_feature_width);
  r.epochs = recognizer.epochs;
  r.batch_size = recognizer.batch_size;
  r.learning_rate = recognizer.learning_rate;
  r.momentum = recognizer.momentum;
  r.weight_decay = recognizer.weight_decay;
  r.permute_persons = recognizer.permute_persons;
  r.seed = seed;
  return r;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  t.prior = prior;
  return t;
}

void RunConfig::check_dataset(const LabeledDataset& data) const {
  if (data.sequences.empty()) throw DataError("dataset is empty");
  const auto& s = data.sequences.front();
  auto fail = [](const std::string& what, std::int64_t cfg, std::int64_t got) {
    throw ConfigError("dataset disagrees with the config on " + what + ": config " + std::to_string(cfg) +
                      ", dataset " + std::to_string(got));
  };
  if (s.persons != this->data.persons) fail("persons (P)", this->data.persons, s.persons);
  if (s.frames != this->data.frames) fail("frames (T)", this->data.frames, s.frames);
  if (s.joints != this->data.joints) fail("joints (J)", this->data.joints, s.joints);
  if (data.class_count != static_cast<int>(this->data.classes.size())) {
    fail("class count (A)", static_cast<std::int64_t>(this->data.classes.size()), data.class_count);
  }
  if (s.representation != this->data.representation) throw ConfigError("dataset disagrees with the config on representation");
}

void RunConfig::validate() const {
  data.validate();
  if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("config: data.val_fraction must lie in [0, 1)");
  GPConfig g = gp;
  g.channels = generator.latent_channels;
  g.length = data.frames;
  g.validate();
  if (!(disc_width_scale > 0) || !(recognizer_width_scale > 0) || recognizer_feature_width < 1) {
    throw ConfigError("config: widths must be positive");
  }
  if (checkpoint_every < 0) throw ConfigError("config: train.checkpoint_every must be >= 0");
  if (eval.per_class < 2) throw ConfigError("config: eval.per_class must be >= 2 for per-class statistics");
  train_config().validate();
  GeneratorConfig gc = generator;
  gc.persons = data.persons;
  gc.frames = data.frames;
  gc.joints = data.joints;
  gc.class_count = static_cast<std::int64_t>(data.classes.size());
  gc.representation = data.representation;
  gc.validate();
}

RunConfig parse_run_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c = RunConfig::defaults();
  apply_tree(tree, c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) throw std::runtime_error("SHA-256 failed");
  std::ostringstream o;
  for (unsigned int i = 0; i < len; ++i) o << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return o.str();
}

std::string sha256_hex(const std::string& text) { return sha256_hex(text.data(), text.size()); }

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

}  // namespace mogen
