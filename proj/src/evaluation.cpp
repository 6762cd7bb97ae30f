#include "mogen/evaluation.hpp"

#include "mogen/errors.hpp"
#include "mogen/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace mogen {

void RecognizerConfig::validate(const SkeletonTopology& topo) const {
  if (class_count < 1 || persons < 1) throw ConfigError("recognizer: class and person counts must be positive");
  if (joints != topo.joint_count) throw ConfigError("recognizer: joint count does not match " + topo.name);
  if (backbone.stages.empty() || backbone.stages.front().in_channels != persons * node_width()) {
    throw ConfigError("recognizer: first stage must take P*D input channels");
  }
  if (epochs < 0 || batch_size < 1) throw ConfigError("recognizer: epochs must be >= 0 and batch size >= 1");
  if (!(learning_rate > 0) || momentum < 0 || momentum >= 1 || weight_decay < 0) {
    throw ConfigError("recognizer: invalid optimiser settings");
  }
  backbone.validate(topo);
}

RecognizerConfig RecognizerConfig::standard(std::int64_t class_count, std::int64_t persons,
                                            const SkeletonTopology& topo, PoseRepresentation rep, double width_scale,
                                            std::int64_t feature_width) {
  RecognizerConfig cfg;
  cfg.class_count = class_count;
  cfg.persons = persons;
  cfg.joints = topo.joint_count;
  cfg.representation = rep;
  cfg.backbone = StgcnConfig::standard(persons * channels_per_node(rep), topo, width_scale);
  cfg.backbone.stages.back().out_channels = feature_width;
  cfg.backbone.batch_norm = true;
  return cfg;
}

double recognizer_learning_rate(const RecognizerConfig& cfg, std::int64_t epoch) {
  const double first = static_cast<double>(cfg.epochs) / 8.0;
  const double second = static_cast<double>(cfg.epochs) * 5.0 / 8.0;
  const double e = static_cast<double>(epoch);
  if (e >= second) return cfg.learning_rate * 0.01;
  if (e >= first) return cfg.learning_rate * 0.1;
  return cfg.learning_rate;
}

Recognizer::Recognizer(RecognizerConfig cfg, SkeletonTopology topo, Rng& rng)
    : cfg_(std::move(cfg)), topo_(std::move(topo)) {
  cfg_.validate(topo_);
  backbone_ = StgcnBackbone(params_, "backbone", cfg_.backbone, topo_, rng, &running_);
  head_ = nn::Linear::create(params_, "head", cfg_.feature_width(), cfg_.class_count, rng);
}

ag::Tensor Recognizer::features(const ag::Tensor& motion) const {
  if (motion.rank() != 4 || motion.dim(1) != cfg_.persons) {
    throw DataError("recognizer: expected [B, " + std::to_string(cfg_.persons) + ", T, C], got " +
                    ag::to_string(motion.shape()));
  }
  NormState norm{const_cast<nn::ParameterSet*>(&running_), false};
  return backbone_.features(params_, graph_input(motion, cfg_.joints, cfg_.node_width()), norm);
}

ag::Tensor Recognizer::logits(const ag::Tensor& motion) const { return head_(params_, features(motion)); }

ag::Tensor Recognizer::train_logits(const ag::Tensor& motion) {
  if (motion.rank() != 4 || motion.dim(1) != cfg_.persons) throw DataError("recognizer: unexpected batch shape");
  const ag::Tensor phi =
      backbone_.features(params_, graph_input(motion, cfg_.joints, cfg_.node_width()), NormState{&running_, true});
  return head_(params_, phi);
}

namespace {

std::vector<int> argmax_rows(const ag::Tensor& logits) {
  const std::int64_t b = logits.dim(0), a = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) {
    const auto row = logits.values().subspan(i * a, a);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

constexpr std::size_t kChunk = 64;

}  // namespace

std::vector<int> Recognizer::predict(std::span<const MotionSequence> seqs) const {
  ag::NoGradGuard guard;
  std::vector<int> out;
  out.reserve(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); i += kChunk) {
    const auto part = seqs.subspan(i, std::min(kChunk, seqs.size() - i));
    const auto p = argmax_rows(logits(motion_batch(part)));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

ag::Tensor cross_entropy(const ag::Tensor& logits, std::span<const int> labels) {
  const std::int64_t b = logits.dim(0), a = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != b) throw DataError("cross entropy: one label per row expected");
  std::vector<double> onehot(static_cast<std::size_t>(b * a), 0.0);
  for (std::int64_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || labels[i] >= a) throw DataError("cross entropy: label out of range");
    onehot[i * a + labels[i]] = 1.0;
  }
  const ag::Tensor shift = ag::max_along(logits, 1, true).detach();
  const ag::Tensor centred = logits - shift;
  const ag::Tensor lse = ag::log(ag::sum(ag::exp(centred), 1));
  const ag::Tensor picked = ag::sum(centred * ag::Tensor::from({b, a}, std::move(onehot)), 1);
  return ag::mean_all(lse - picked);
}

Recognizer train_recognizer(const LabeledDataset& train, const LabeledDataset& validation, const RecognizerConfig& cfg,
                            RecognizerReport* report) {
  train.validate();
  if (train.sequences.empty()) throw DataError("recognizer training needs samples");
  const auto& first = train.sequences.front();
  if (first.persons != cfg.persons || first.joints != cfg.joints || first.representation != cfg.representation ||
      train.class_count != cfg.class_count) {
    throw ConfigError("recognizer configuration does not match the dataset");
  }
  std::seed_seq init_seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 10u};
  std::seed_seq data_seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 11u};
  Rng init(init_seq), rng(data_seq);
  Recognizer rec(cfg, train.topology, init);
  nn::Sgd opt(nn::SgdConfig{cfg.learning_rate, cfg.momentum, cfg.weight_decay}, rec.params());

  RecognizerReport local;
  const std::int64_t n = static_cast<std::int64_t>(train.size());
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = recognizer_learning_rate(cfg, epoch);
    opt.set_learning_rate(lr);
    const auto order = random_permutation(n, rng);
    double total = 0;
    for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
      const std::int64_t end = std::min(n, start + cfg.batch_size);
      std::vector<MotionSequence> seqs;
      std::vector<int> labels;
      for (std::int64_t k = start; k < end; ++k) {
        const auto& s = train.sequences[order[k]];
        seqs.push_back(cfg.permute_persons && s.persons > 1 ? permute_persons(s, random_permutation(s.persons, rng))
                                                            : s);
        labels.push_back(train.labels[order[k]]);
      }
      const ag::Tensor loss = cross_entropy(rec.train_logits(motion_batch(seqs)), labels);
      const double l = loss.item();
      if (!std::isfinite(l) || std::abs(l) > 1e6) {
        throw DivergenceError("recognizer loss diverged in epoch " + std::to_string(epoch));
      }
      total += l * static_cast<double>(end - start);
      opt.step(rec.params(), ag::grad(loss, rec.params().tensors()));
    }
    local.epoch_loss.push_back(total / static_cast<double>(n));
    local.epoch_learning_rate.push_back(lr);
  }
  local.train_accuracy = accuracy(rec, train.sequences, train.labels);
  if (!validation.sequences.empty()) local.validation_accuracy = accuracy(rec, validation.sequences, validation.labels);
  if (report) *report = std::move(local);
  return rec;
}

std::vector<double> extract_features(const MotionSequence& seq, const Recognizer& rec) {
  if (seq.persons != rec.config().persons) {
    throw DataError("feature extraction: recognizer expects " + std::to_string(rec.config().persons) +
                    " person(s), sequence has " + std::to_string(seq.persons));
  }
  ag::NoGradGuard guard;
  const MotionSequence one[1] = {seq};
  const auto f = rec.features(motion_batch(one));
  return {f.values().begin(), f.values().end()};
}

std::vector<double> aggregate_person_features(const MotionSequence& seq, const Recognizer& single) {
  if (single.config().persons != 1) throw DataError("person aggregation needs a single-person recognizer");
  std::vector<MotionSequence> people;
  for (std::int64_t p = 0; p < seq.persons; ++p) people.push_back(select_person(seq, p));
  ag::NoGradGuard guard;
  const auto f = single.features(motion_batch(people));
  const std::int64_t width = f.dim(1);
  std::vector<double> out(f.values().begin(), f.values().begin() + width);
  for (std::int64_t p = 1; p < seq.persons; ++p) {
    for (std::int64_t k = 0; k < width; ++k) out[k] = std::max(out[k], f.at(p * width + k));
  }
  return out;
}

FeatureSet extract_feature_set(std::span<const MotionSequence> seqs, std::span<const int> labels,
                               const Recognizer& rec, PersonMode mode) {
  if (seqs.size() != labels.size()) throw DataError("feature set: one label per sequence expected");
  if (mode == PersonMode::PerPerson && rec.config().persons != 1) {
    throw DataError("per-person features need a single-person recognizer");
  }
  FeatureSet out;
  out.mode = mode;
  out.labels.assign(labels.begin(), labels.end());
  const std::int64_t width = rec.config().feature_width();
  out.features.resize(static_cast<Eigen::Index>(seqs.size()), width);
  ag::NoGradGuard guard;
  if (mode == PersonMode::WholeGroup) {
    for (std::size_t i = 0; i < seqs.size(); i += kChunk) {
      const auto part = seqs.subspan(i, std::min(kChunk, seqs.size() - i));
      for (const auto& s : part) {
        if (s.persons != rec.config().persons) throw DataError("feature extraction: person count mismatch");
      }
      const auto f = rec.features(motion_batch(part));
      for (std::size_t r = 0; r < part.size(); ++r) {
        for (std::int64_t k = 0; k < width; ++k) out.features(static_cast<Eigen::Index>(i + r), k) = f.at(r * width + k);
      }
    }
  } else {
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      const auto f = aggregate_person_features(seqs[i], rec);
      for (std::int64_t k = 0; k < width; ++k) out.features(static_cast<Eigen::Index>(i), k) = f[k];
    }
  }
  return out;
}

Gaussian fit_gaussian(const Eigen::MatrixXd& rows) {
  if (rows.rows() < 2) throw DataError("a Gaussian fit needs at least two samples");
  Gaussian g;
  g.mean = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centred = rows.rowwise() - g.mean.transpose();
  g.cov = (centred.transpose() * centred) / static_cast<double>(rows.rows() - 1);
  return g;
}

double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& s2) {
  const auto n = mu1.size();
  if (mu2.size() != n || s1.rows() != n || s1.cols() != n || s2.rows() != n || s2.cols() != n) {
    throw DataError("Frechet distance: dimension mismatch");
  }
  for (const Eigen::MatrixXd* s : {&s1, &s2}) {
    if (((*s) - s->transpose()).cwiseAbs().maxCoeff() > 1e-6) {
      throw DataError("Frechet distance: covariance is not symmetric");
    }
  }
  const Eigen::MatrixXd a = 0.5 * (s1 + s1.transpose());
  const Eigen::MatrixXd b = 0.5 * (s2 + s2.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a);
  const Eigen::VectorXd root_vals = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd root = ea.eigenvectors() * root_vals.asDiagonal() * ea.eigenvectors().transpose();
  const Eigen::MatrixXd inner = root * b * root;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_cross = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (mu1 - mu2).squaredNorm() + a.trace() + b.trace() - 2.0 * tr_cross;
  return std::max(0.0, d);
}

double frechet_distance(const Gaussian& a, const Gaussian& b) { return frechet_distance(a.mean, a.cov, b.mean, b.cov); }

double fid_whole(const FeatureSet& real, const FeatureSet& gen) {
  return frechet_distance(fit_gaussian(real.features), fit_gaussian(gen.features));
}

namespace {

Eigen::MatrixXd rows_of_class(const FeatureSet& s, int label) {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    if (s.labels[i] == label) idx.push_back(static_cast<Eigen::Index>(i));
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), s.features.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = s.features.row(idx[i]);
  return out;
}

}  // namespace

std::vector<double> fid_per_class(const FeatureSet& real, const FeatureSet& gen) {
  std::vector<int> classes(real.labels);
  classes.insert(classes.end(), gen.labels.begin(), gen.labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.empty()) throw DataError("per-class FID needs labelled samples");
  std::vector<double> out(static_cast<std::size_t>(classes.back() + 1), 0.0);
  for (int c : classes) {
    const auto r = rows_of_class(real, c);
    const auto g = rows_of_class(gen, c);
    if (r.rows() < 2 || g.rows() < 2) {
      throw DataError("per-class FID: class " + std::to_string(c) + " needs at least two samples on both sides");
    }
    out[c] = frechet_distance(fit_gaussian(r), fit_gaussian(g));
  }
  return out;
}

double fid_mean(const FeatureSet& real, const FeatureSet& gen) {
  std::vector<int> classes(real.labels);
  classes.insert(classes.end(), gen.labels.begin(), gen.labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  const auto per = fid_per_class(real, gen);
  double s = 0;
  for (int c : classes) s += per[c];
  return s / static_cast<double>(classes.size());
}

double accuracy(std::span<const int> predicted, std::span<const int> intended) {
  if (predicted.size() != intended.size() || predicted.empty()) throw DataError("accuracy: label counts differ");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hit += predicted[i] == intended[i];
  return static_cast<double>(hit) / static_cast<double>(predicted.size());
}

double accuracy(const Classifier& clf, std::span<const MotionSequence> seqs, std::span<const int> intended) {
  const auto p = clf.predict(seqs);
  return accuracy(p, intended);
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["run_id"] = run_id;
  j["config_hash"] = config_hash;
  nlohmann::ordered_json m;
  m["Acc."] = acc;
  m["FID_m"] = fid_m;
  m["FID_w"] = fid_w;
  m["FID^a_m"] = fid_a_m ? nlohmann::ordered_json(*fid_a_m) : nlohmann::ordered_json(nullptr);
  m["FID^a_w"] = fid_a_w ? nlohmann::ordered_json(*fid_a_w) : nlohmann::ordered_json(nullptr);
  j["metrics"] = m;
  j["samples"] = {{"real", real_samples}, {"generated", generated_samples}};
  j["recognizer_hash"] = recognizer_hash;
  j["single_person_recognizer_hash"] = single_recognizer_hash.empty() ? nlohmann::ordered_json(nullptr)
                                                                      : nlohmann::ordered_json(single_recognizer_hash);
  return j.dump(2);
}

MetricsReport evaluate_samples(const LabeledDataset& real, std::span<const MotionSequence> generated,
                               std::span<const int> labels, const Recognizer& whole, const Recognizer* single) {
  if (real.sequences.empty() || generated.empty()) throw DataError("evaluation needs real and generated samples");
  const std::int64_t persons = real.sequences.front().persons;
  if (whole.config().persons != persons) {
    throw ConfigError("evaluation: recognizer person count does not match the data");
  }
  if (persons > 1 && single == nullptr) {
    throw ConfigError("evaluation: multi-person data needs a single-person recognizer for FID^a");
  }
  MetricsReport r;
  r.real_samples = static_cast<std::int64_t>(real.size());
  r.generated_samples = static_cast<std::int64_t>(generated.size());
  r.acc = accuracy(whole, generated, labels);
  const auto fr = extract_feature_set(real.sequences, real.labels, whole, PersonMode::WholeGroup);
  const auto fg = extract_feature_set(generated, labels, whole, PersonMode::WholeGroup);
  r.fid_w = fid_whole(fr, fg);
  r.fid_m = fid_mean(fr, fg);
  if (single != nullptr && persons > 1) {
    const auto ar = extract_feature_set(real.sequences, real.labels, *single, PersonMode::PerPerson);
    const auto ag_ = extract_feature_set(generated, labels, *single, PersonMode::PerPerson);
    r.fid_a_w = fid_whole(ar, ag_);
    r.fid_a_m = fid_mean(ar, ag_);
  }
  return r;
}

std::pair<std::vector<MotionSequence>, std::vector<int>> generate_samples(const Generator& gen,
                                                                           const LatentSampler& latents,
                                                                           const EvalProtocol& protocol) {
  if (protocol.per_class < 1 || protocol.batch_size < 1) throw ConfigError("evaluation: counts must be positive");
  std::seed_seq seq{static_cast<std::uint32_t>(protocol.seed), static_cast<std::uint32_t>(protocol.seed >> 32), 20u};
  Rng rng(seq);
  std::vector<int> labels;
  for (int a = 0; a < gen.config().class_count; ++a) labels.insert(labels.end(), protocol.per_class, a);
  std::vector<MotionSequence> out;
  out.reserve(labels.size());
  ag::NoGradGuard guard;
  for (std::size_t i = 0; i < labels.size(); i += static_cast<std::size_t>(protocol.batch_size)) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(protocol.batch_size), labels.size() - i);
    const std::span<const int> part(labels.data() + i, n);
    auto seqs = gen.to_motion(gen.forward(latents.batch(static_cast<std::int64_t>(n), rng), part));
    for (auto& s : seqs) out.push_back(std::move(s));
  }
  return {std::move(out), std::move(labels)};
}

MetricsReport evaluate(const Generator& gen, const LatentSampler& latents, const Recognizer& whole,
                       const Recognizer* single, const LabeledDataset& real, const EvalProtocol& protocol) {
  const auto [seqs, labels] = generate_samples(gen, latents, protocol);
  return evaluate_samples(real, seqs, labels, whole, single);
}

}  // namespace mogen
