#include "mogen/training.hpp"

#include "mogen/errors.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mogen {

namespace {

// Independent streams derived from the run seed.
Rng stream(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  return Rng(seq);
}

double mean_of(const ag::Tensor& t) {
  double s = 0;
  for (double v : t.values()) s += v;
  return s / static_cast<double>(t.size());
}

}  // namespace

std::string_view prior_name(LatentPrior prior) {
  return prior == LatentPrior::GaussianProcess ? "gaussian_process" : "iid_gaussian";
}

LatentPrior parse_prior(std::string_view name) {
  if (name == "gaussian_process") return LatentPrior::GaussianProcess;
  if (name == "iid_gaussian") return LatentPrior::IidGaussian;
  throw ConfigError("unknown latent prior '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("training: learning rate must be positive");
  if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1) {
    throw ConfigError("training: Adam betas must lie in [0, 1)");
  }
  if (batch_size < 1 || d_steps_per_g < 1) throw ConfigError("training: batch size and critic steps must be >= 1");
  if (epochs < 0 || max_iterations < 0) throw ConfigError("training: iteration budget must be non-negative");
  if (gradient_penalty_weight < 0 || clip_value < 0) throw ConfigError("training: penalty and clip must be >= 0");
  if (!(divergence_threshold > 0)) throw ConfigError("training: divergence threshold must be positive");
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out << "iter,d_loss,g_loss,penalty,gap,epoch\n" << std::setprecision(17);
  for (const auto& r : records) {
    out << r.iter << ',' << r.d_loss << ',' << r.g_loss << ',' << r.penalty << ',' << r.gap << ',' << r.epoch << '\n';
  }
  return out.str();
}

TrainLog TrainLog::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "iter,d_loss,g_loss,penalty,gap,epoch") {
    throw DataError("training log: missing or unexpected CSV header");
  }
  TrainLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    TrainRecord r;
    char c1, c2, c3, c4, c5;
    if (!(row >> r.iter >> c1 >> r.d_loss >> c2 >> r.g_loss >> c3 >> r.penalty >> c4 >> r.gap >> c5 >> r.epoch)) {
      throw DataError("training log: malformed row '" + line + "'");
    }
    log.records.push_back(r);
  }
  return log;
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_csv();
}

ag::Tensor gradient_penalty(const Critic& critic, const ag::Tensor& real, const ag::Tensor& fake,
                            std::span<const int> labels, Rng& rng) {
  if (real.shape() != fake.shape()) throw DataError("gradient penalty: real and fake shapes differ");
  const std::int64_t b = real.dim(0), per = real.size() / b;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> mixed(static_cast<std::size_t>(real.size()));
  for (std::int64_t i = 0; i < b; ++i) {
    const double u = unit(rng);
    for (std::int64_t k = i * per; k < (i + 1) * per; ++k) mixed[k] = u * real.at(k) + (1 - u) * fake.at(k);
  }
  ag::Tensor x = ag::Tensor::from(real.shape(), std::move(mixed));
  x.set_requires_grad(true);
  const ag::Tensor scores = critic.score(x, labels);
  const ag::Tensor gx = ag::grad(ag::sum_all(scores), std::vector<ag::Tensor>{x}, true).front();
  const ag::Tensor norms = ag::sqrt(ag::sum(ag::square(ag::reshape(gx, {b, per})), 1));
  return ag::mean_all(ag::square(ag::add_scalar(norms, -1.0)));
}

CriticTerms d_loss(const Critic& critic, const ag::Tensor& real, const ag::Tensor& fake,
                   std::span<const int> labels, double lambda, Rng& rng) {
  const ag::Tensor fake_c = fake.detach();
  const ag::Tensor s_fake = critic.score(fake_c, labels);
  const ag::Tensor s_real = critic.score(real, labels);
  CriticTerms out;
  out.loss = ag::mean_all(s_fake) - ag::mean_all(s_real);
  out.fake_mean = mean_of(s_fake);
  out.real_mean = mean_of(s_real);
  if (lambda > 0) {
    const ag::Tensor pen = gradient_penalty(critic, real, fake_c, labels, rng);
    out.penalty = pen.item();
    out.loss = out.loss + ag::scale(pen, lambda);
  }
  return out;
}

ag::Tensor g_loss(const Critic& critic, const ag::Tensor& fake, std::span<const int> labels) {
  return ag::neg(ag::mean_all(critic.score(fake, labels)));
}

LatentSampler::LatentSampler(const GeneratorConfig& gen, LatentPrior prior, GPConfig gp)
    : gen_(gen), prior_(prior), gp_cfg_(gp), gp_([&] {
        gp.channels = gen.latent_channels;
        gp.length = gen.frames;
        return gp;
      }()) {
  gp_cfg_ = gp_.config();
}

std::vector<LatentSequence> LatentSampler::draw(std::int64_t count, Rng& rng) const {
  std::vector<LatentSequence> z;
  const std::int64_t n = count * gen_.latent_persons();
  z.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    z.push_back(prior_ == LatentPrior::GaussianProcess ? gp_.sample(rng)
                                                       : sample_iid_latent(gen_.frames, gen_.latent_channels, rng));
  }
  return z;
}

ag::Tensor LatentSampler::batch(std::int64_t count, Rng& rng) const {
  const auto z = draw(count, rng);
  const std::int64_t per = gen_.latent_persons(), t = gen_.frames, c = gen_.latent_channels;
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(count * per * t * c));
  for (const auto& s : z) {
    for (std::int64_t i = 0; i < t; ++i) {
      for (std::int64_t k = 0; k < c; ++k) v.push_back(s.values(i, k));
    }
  }
  return ag::Tensor::from({count, per, t, c}, std::move(v));
}

RealBatchSampler::RealBatchSampler(const LabeledDataset& data, bool permute)
    : data_(&data), permute_(permute), index_(data.class_index()), classes_([&] {
        const auto counts = data.class_counts();
        for (auto c : counts) {
          if (c < 1) throw DataError("every class needs at least one real sample for training");
        }
        return SquareRootClassSampler(counts);
      }()) {}

std::vector<int> RealBatchSampler::labels(std::int64_t count, Rng& rng) const {
  std::vector<int> out(static_cast<std::size_t>(count));
  for (auto& a : out) a = classes_(rng);
  return out;
}

std::pair<ag::Tensor, std::vector<int>> RealBatchSampler::draw(std::int64_t count, Rng& rng) const {
  auto lab = labels(count, rng);
  std::vector<MotionSequence> seqs;
  seqs.reserve(lab.size());
  for (int a : lab) {
    const auto& members = index_[a];
    const auto& s = data_->sequences[members[rng() % members.size()]];
    if (permute_ && s.persons > 1) {
      seqs.push_back(permute_persons(s, random_permutation(s.persons, rng)));
    } else {
      seqs.push_back(s);
    }
  }
  return {motion_batch(seqs), std::move(lab)};
}

void check_consistency(const LabeledDataset& data, const GeneratorConfig& gen, const DiscriminatorConfig& disc) {
  if (data.sequences.empty()) throw DataError("training needs a non-empty dataset");
  const auto& s = data.sequences.front();
  auto fail = [](const std::string& what) { throw ConfigError("dataset and model disagree on " + what); };
  if (gen.persons != s.persons || disc.persons != s.persons) fail("the person count P");
  if (gen.frames != s.frames) fail("the frame count T");
  if (gen.joints != s.joints || disc.joints != s.joints) fail("the joint count J");
  if (gen.representation != s.representation || disc.representation != s.representation) {
    fail("the pose representation");
  }
  if (gen.class_count != data.class_count || disc.class_count != data.class_count) fail("the class count A");
}

GanTrainer::GanTrainer(const LabeledDataset& data, GeneratorConfig gen, DiscriminatorConfig disc, GPConfig gp,
                       TrainConfig train)
    : data_(&data),
      cfg_(train),
      latents_(gen, train.prior, gp),
      reals_(data, train.permute_persons),
      data_rng_(stream(train.seed, 1)),
      latent_rng_(stream(train.seed, 2)),
      penalty_rng_(stream(train.seed, 3)) {
  cfg_.validate();
  data.validate();
  check_consistency(data, gen, disc);
  Rng init = stream(cfg_.seed, 0);
  gen_ = Generator(gen, init);
  disc_ = Discriminator(disc, data.topology, init);
  const nn::AdamConfig adam{cfg_.learning_rate, cfg_.adam_beta1, cfg_.adam_beta2, 1e-8};
  gen_opt_ = nn::Adam(adam, gen_.params());
  disc_opt_ = nn::Adam(adam, disc_.params());
}

std::int64_t GanTrainer::iterations_per_epoch() const {
  const auto n = static_cast<std::int64_t>(data_->size());
  return (n + cfg_.batch_size - 1) / cfg_.batch_size;
}

std::int64_t GanTrainer::planned_iterations() const {
  return cfg_.max_iterations > 0 ? cfg_.max_iterations : cfg_.epochs * iterations_per_epoch();
}

TrainRecord GanTrainer::step() {
  const std::int64_t b = cfg_.batch_size;
  CriticTerms last;
  double last_loss = 0;
  for (std::int64_t k = 0; k < cfg_.d_steps_per_g; ++k) {
    auto [real, labels] = reals_.draw(b, data_rng_);
    ag::Tensor fake;
    {
      ag::NoGradGuard guard;
      fake = gen_.forward(latents_.batch(b, latent_rng_), labels);
    }
    last = d_loss(disc_, real, fake, labels, cfg_.gradient_penalty_weight, penalty_rng_);
    last_loss = last.loss.item();
    if (!std::isfinite(last_loss) || std::abs(last_loss) > cfg_.divergence_threshold) {
      throw DivergenceError("critic loss diverged at iteration " + std::to_string(iteration_) + ": " +
                            std::to_string(last_loss));
    }
    const auto grads = ag::grad(last.loss, disc_.params().tensors());
    disc_opt_.step(disc_.params(), grads);
    if (cfg_.clip_value > 0) nn::clip_weights(disc_.params(), cfg_.clip_value);
  }

  const auto labels = reals_.labels(b, data_rng_);
  const ag::Tensor fake = gen_.forward(latents_.batch(b, latent_rng_), labels);
  const ag::Tensor loss = g_loss(disc_, fake, labels);
  const double gl = loss.item();
  if (!std::isfinite(gl)) throw DivergenceError("generator loss is not finite at iteration " + std::to_string(iteration_));
  const auto grads = ag::grad(loss, gen_.params().tensors());
  gen_opt_.step(gen_.params(), grads);

  TrainRecord r;
  r.iter = iteration_;
  r.d_loss = last_loss;
  r.g_loss = gl;
  r.penalty = last.penalty;
  r.gap = last.real_mean - last.fake_mean;
  r.epoch = iteration_ / iterations_per_epoch();
  ++iteration_;
  log_.records.push_back(r);
  return r;
}

void GanTrainer::run(std::optional<std::int64_t> iterations) {
  const std::int64_t target = iterations.value_or(planned_iterations());
  auto epoch_start = std::chrono::steady_clock::now();
  while (iteration_ < target) {
    const TrainRecord r = step();
    if (on_iteration) on_iteration(*this, r);
    if (iteration_ % iterations_per_epoch() == 0) {
      const auto now = std::chrono::steady_clock::now();
      log_.epoch_seconds.push_back(std::chrono::duration<double>(now - epoch_start).count());
      epoch_start = now;
    }
  }
}

std::string GanTrainer::random_state() const {
  std::ostringstream out;
  out << data_rng_ << '\n' << latent_rng_ << '\n' << penalty_rng_;
  return out.str();
}

void GanTrainer::set_random_state(const std::string& state) {
  std::istringstream in(state);
  if (!(in >> data_rng_ >> latent_rng_ >> penalty_rng_)) throw DataError("checkpoint: corrupt random state");
}

}  // namespace mogen
