#include "doctest.h"
#include "gradcheck.hpp"

#include "mogen/errors.hpp"
#include "mogen/synth.hpp"
#include "mogen/training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

using namespace mogen;
using ag::Shape;
using ag::Tensor;

namespace {

Tensor randn(Shape s, Rng& rng, double sd = 1.0) { return nn::normal_tensor(std::move(s), sd, rng).detach(); }

// Critic defined by an arbitrary differentiable function of the batch.
class StubCritic : public Critic {
 public:
  explicit StubCritic(std::function<Tensor(const Tensor&)> f) : f_(std::move(f)) {}
  Tensor score(const Tensor& motion, std::span<const int>) const override { return f_(motion); }

 private:
  std::function<Tensor(const Tensor&)> f_;
};

// Per-sample <w, x> + c over the flattened sample.
StubCritic linear_critic(const std::vector<double>& w, double c) {
  return StubCritic([w, c](const Tensor& x) {
    const std::int64_t b = x.dim(0), n = x.size() / b;
    const Tensor wt = Tensor::from({n, 1}, w);
    return ag::add_scalar(ag::reshape(ag::matmul(ag::reshape(x, {b, n}), wt), {b}), c);
  });
}

LabeledDataset tiny_dataset(std::int64_t classes, std::int64_t per_class, std::int64_t persons, std::uint64_t seed) {
  auto spec = SynthSpec::with_class_count(classes, persons);
  spec.per_class = per_class;
  Rng rng(seed);
  return synth_dataset(spec, rng);
}

GeneratorConfig tiny_generator(const LabeledDataset& data, std::int64_t width = 8) {
  GeneratorConfig g;
  g.latent_channels = 4;
  g.width = width;
  g.heads = 2;
  g.layer_pairs = 1;
  g.class_count = data.class_count;
  g.persons = data.sequences.front().persons;
  g.frames = data.sequences.front().frames;
  g.joints = data.sequences.front().joints;
  return g;
}

DiscriminatorConfig tiny_discriminator(const LabeledDataset& data, double scale = 0.125) {
  const auto& s = data.sequences.front();
  return DiscriminatorConfig::standard(data.class_count, s.persons, data.topology, s.representation, scale);
}

GPConfig gp_config() {
  GPConfig gp;
  gp.length_scale_max = 16;
  return gp;
}

TrainConfig train_config(std::int64_t batch, std::uint64_t seed) {
  TrainConfig t;
  t.batch_size = batch;
  t.seed = seed;
  return t;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_CASE("critic loss on stub critics") {
  Rng rng(1);
  const int labels[2] = {0, 0};

  SUBCASE("constant critic: zero Wasserstein term, unit penalty") {
    const auto critic = linear_critic({0, 0, 0}, 2.5);
    const Tensor real = randn({2, 1, 1, 3}, rng), fake = randn({2, 1, 1, 3}, rng);
    const auto t0 = d_loss(critic, real, fake, labels, 0.0, rng);
    CHECK(t0.loss.item() == 0.0);
    const auto t10 = d_loss(critic, real, fake, labels, 10.0, rng);
    CHECK(t10.penalty == 1.0);
    CHECK(t10.loss.item() == 10.0);
  }
  SUBCASE("fake scores [1, 3], real scores [2, 2]") {
    const auto critic = linear_critic({1}, 0.0);
    const Tensor fake = Tensor::from({2, 1, 1, 1}, {1, 3});
    const Tensor real = Tensor::from({2, 1, 1, 1}, {2, 2});
    const auto t = d_loss(critic, real, fake, labels, 0.0, rng);
    CHECK(t.loss.item() == 0.0);
    CHECK(t.fake_mean == 2.0);
    CHECK(t.real_mean == 2.0);
  }
  SUBCASE("generator loss against a constant critic of 5") {
    const auto critic = linear_critic({0, 0}, 5.0);
    CHECK(g_loss(critic, randn({2, 1, 1, 2}, rng), labels).item() == -5.0);
  }
}

TEST_CASE("gradient penalty of known critics") {
  Rng rng(2);
  const int labels[3] = {0, 1, 0};
  const Tensor real = randn({3, 1, 2, 3}, rng), fake = randn({3, 1, 2, 3}, rng);

  std::vector<double> w(6);
  for (double& v : w) v = std::normal_distribution<double>(0, 1)(rng);
  double norm = 0;
  for (double v : w) norm += v * v;
  for (double& v : w) v /= std::sqrt(norm);
  CHECK(gradient_penalty(linear_critic(w, 0.7), real, fake, labels, rng).item() == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(gradient_penalty(linear_critic(std::vector<double>(6, 0.0), 0.0), real, fake, labels, rng).item() == 1.0);

  const Tensor r1 = randn({3, 1, 1, 1}, rng), f1 = randn({3, 1, 1, 1}, rng);
  CHECK(gradient_penalty(linear_critic({2.0}, 0.0), r1, f1, labels, rng).item() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(gradient_penalty(linear_critic({2.0}, 0.0), r1, real, labels, rng), DataError);
}

TEST_CASE("critic and generator losses add up to minus the mean real score") {
  const auto data = tiny_dataset(2, 4, 1, 3);
  Rng rng(3);
  Discriminator d(tiny_discriminator(data), data.topology, rng);
  const int labels[4] = {0, 1, 1, 0};
  std::vector<MotionSequence> seqs(data.sequences.begin(), data.sequences.begin() + 4);
  const Tensor real = motion_batch(seqs);
  const Tensor fake = randn(real.shape(), rng, 0.2);
  const double dl = d_loss(d, real, fake, labels, 0.0, rng).loss.item();
  const double gl = g_loss(d, fake, labels).item();
  const double mean_real = ag::mean_all(d.score(real, labels)).item();
  CHECK(dl + gl == doctest::Approx(-mean_real).epsilon(1e-12).scale(1.0));
}

TEST_CASE("loss gradients match central differences") {
  const auto data = tiny_dataset(2, 2, 1, 4);
  Rng rng(4);
  // Two frames keep the generator and critic small enough for exhaustive differencing.
  LabeledDataset short_data = data;
  for (auto& s : short_data.sequences) s = crop_or_pad(s, 2);
  auto gcfg = tiny_generator(short_data, 4);
  gcfg.frames = 2;
  Generator g(gcfg, rng);
  Discriminator d(tiny_discriminator(short_data, 0.0625), short_data.topology, rng);
  const int labels[2] = {1, 0};
  const Tensor z = randn({2, 1, 2, 4}, rng);
  const Tensor real = motion_batch(std::span(short_data.sequences).first(2));
  const Tensor fake = g.forward(z, labels).detach();
  std::vector<Tensor> dparams(d.params().tensors().begin(), d.params().tensors().end());

  SUBCASE("critic loss without penalty") {
    // The output bias cancels between the fake and real means: its gradient is
    // exactly zero. Biases further in cancel the same way while both batches
    // share activation regions.
    auto loss = [&](const std::vector<Tensor>&) {
      Rng r(0);
      return d_loss(d, real, fake, labels, 0.0, r).loss;
    };
    CHECK(testing::max_grad_error_norm(loss, dparams) < 1e-4);
    const Tensor one[1] = {d.params().at("output.bias")};
    CHECK(ag::grad(loss({}), one)[0].item() == 0.0);
  }
  SUBCASE("critic loss with gradient penalty (double backward)") {
    auto loss = [&](const std::vector<Tensor>&) {
      Rng r(0);
      return d_loss(d, real, fake, labels, 10.0, r).loss;
    };
    CHECK(testing::max_grad_error_norm(loss, dparams) < 1e-4);
  }
  SUBCASE("generator loss w.r.t. generator weights") {
    std::vector<Tensor> gparams;
    for (const char* name : {"input.weight", "output.weight", "class_embedding", "tformer.0.fc1.weight"}) {
      gparams.push_back(g.params().at(name));
    }
    auto loss = [&](const std::vector<Tensor>&) { return g_loss(d, g.forward(z, labels), labels); };
    CHECK(testing::max_grad_error_norm(loss, gparams) < 1e-4);
  }
}

TEST_CASE("critic steps never touch the generator and generator steps never touch the critic") {
  const auto data = tiny_dataset(2, 4, 1, 5);
  GanTrainer trainer(data, tiny_generator(data), tiny_discriminator(data), gp_config(), train_config(4, 5));
  Generator& g = trainer.generator();
  Discriminator& d = trainer.discriminator();
  Rng rng(5);
  RealBatchSampler reals(data, true);

  const auto g0 = g.params().fingerprint(), d0 = d.params().fingerprint();
  auto [real, labels] = reals.draw(4, rng);
  const Tensor fake = g.forward(trainer.latents().batch(4, rng), labels);  // graph reaches the generator
  const auto terms = d_loss(d, real, fake, labels, 10.0, rng);
  std::vector<Tensor> all(d.params().tensors().begin(), d.params().tensors().end());
  all.insert(all.end(), g.params().tensors().begin(), g.params().tensors().end());
  const auto grads = ag::grad(terms.loss, all);
  for (std::size_t i = d.params().size(); i < all.size(); ++i) {
    for (double v : grads[i].values()) CHECK(v == 0.0);
  }
  trainer.discriminator_optimizer().step(d.params(), std::span(grads).first(d.params().size()));
  CHECK(g.params().fingerprint() == g0);
  CHECK(d.params().fingerprint() != d0);

  const auto d1 = d.params().fingerprint();
  const Tensor gl = g_loss(d, g.forward(trainer.latents().batch(4, rng), labels), labels);
  trainer.generator_optimizer().step(g.params(), ag::grad(gl, g.params().tensors()));
  CHECK(d.params().fingerprint() == d1);
  CHECK(g.params().fingerprint() != g0);
}

TEST_CASE("an Adam step with zero gradients leaves parameters unchanged") {
  Rng rng(6);
  nn::ParameterSet ps;
  ps.add("a", randn({3, 4}, rng));
  ps.add("b", randn({5}, rng));
  const nn::ParameterSet before = ps;
  nn::Adam adam({}, ps);
  const std::vector<Tensor> zeros = {Tensor::zeros({3, 4}), Tensor::zeros({5})};
  for (int i = 0; i < 3; ++i) adam.step(ps, zeros);
  CHECK(ps.equals(before));
  CHECK(adam.steps() == 3);
}

TEST_CASE("a zero budget returns the initial states") {
  const auto data = tiny_dataset(2, 4, 1, 7);
  auto t = train_config(4, 7);
  t.epochs = 0;
  GanTrainer trained(data, tiny_generator(data), tiny_discriminator(data), gp_config(), t);
  trained.run();
  GanTrainer fresh(data, tiny_generator(data), tiny_discriminator(data), gp_config(), t);
  CHECK(trained.iteration() == 0);
  CHECK(trained.log().records.empty());
  CHECK(trained.generator().params().equals(fresh.generator().params()));
  CHECK(trained.discriminator().params().equals(fresh.discriminator().params()));
}

TEST_CASE("the same seed reproduces the log and the states bit for bit") {
  const auto data = tiny_dataset(2, 4, 2, 8);
  auto t = train_config(4, 8);
  t.max_iterations = 12;
  GanTrainer a(data, tiny_generator(data), tiny_discriminator(data), gp_config(), t);
  GanTrainer b(data, tiny_generator(data), tiny_discriminator(data), gp_config(), t);
  a.run();
  b.run();
  REQUIRE(a.log().records.size() == 12);
  CHECK(a.log().records == b.log().records);
  CHECK(a.generator().params().equals(b.generator().params()));
  CHECK(a.discriminator().params().equals(b.discriminator().params()));
  CHECK(a.random_state() == b.random_state());

  t.seed = 9;
  GanTrainer c(data, tiny_generator(data), tiny_discriminator(data), gp_config(), t);
  c.run(3);
  CHECK(c.log().records[2].d_loss != a.log().records[2].d_loss);

  // The log survives its CSV form exactly.
  CHECK(TrainLog::from_csv(a.log().to_csv()).records == a.log().records);
  CHECK(a.log().to_csv().starts_with("iter,d_loss,g_loss,penalty,gap,epoch\n"));
}

TEST_CASE("real multi-person draws cover every person order") {
  Rng rng(10);
  auto data = tiny_dataset(2, 1, 2, 10);
  // A three-person sample whose persons are told apart by their root x at frame 0.
  auto s = MotionSequence::zeros(3, 2, 5, PoseRepresentation::JointCoordinates);
  for (int p = 0; p < 3; ++p) s.root_at(p, 0, 0) = p;
  data.sequences = {s};
  data.labels = {0};
  data.class_count = 1;
  RealBatchSampler sampler(data, true);
  std::map<std::vector<int>, int> hist;
  for (int i = 0; i < 1000; ++i) {
    const Tensor x = sampler.draw(1, rng).first;
    const std::int64_t per = x.size() / 3;
    std::vector<int> order;
    for (int p = 0; p < 3; ++p) order.push_back(static_cast<int>(x.at(p * per)));
    ++hist[order];
  }
  CHECK(hist.size() == 6);
  double chi2 = 0;
  for (const auto& [k, c] : hist) chi2 += std::pow(c - 1000.0 / 6, 2) / (1000.0 / 6);
  CHECK(chi2 < 15.086);  // 5 degrees of freedom, p = 0.01

  RealBatchSampler fixed(data, false);
  for (int i = 0; i < 20; ++i) {
    const Tensor x = fixed.draw(1, rng).first;
    for (int p = 0; p < 3; ++p) CHECK(x.at(p * (x.size() / 3)) == p);
  }
}

TEST_CASE("labels follow square-root class frequencies") {
  auto data = tiny_dataset(2, 1, 1, 11);
  // 1 sample of class 0, 16 of class 1: probabilities 1/5 and 4/5.
  for (int i = 0; i < 15; ++i) {
    data.sequences.push_back(data.sequences[1]);
    data.labels.push_back(1);
  }
  RealBatchSampler sampler(data, false);
  Rng rng(11);
  const auto labels = sampler.labels(20000, rng);
  const double share = static_cast<double>(std::count(labels.begin(), labels.end(), 0)) / labels.size();
  CHECK(share == doctest::Approx(0.2).epsilon(0.05));
}

TEST_CASE("mismatched shapes and diverging losses are reported") {
  const auto data = tiny_dataset(2, 4, 1, 12);
  auto g = tiny_generator(data);
  g.frames = 8;
  CHECK_THROWS_AS(GanTrainer(data, g, tiny_discriminator(data), gp_config(), train_config(4, 1)), ConfigError);
  auto t = train_config(4, 1);
  t.d_steps_per_g = 0;
  CHECK_THROWS_AS(GanTrainer(data, tiny_generator(data), tiny_discriminator(data), gp_config(), t), ConfigError);

  auto wild = train_config(4, 1);
  wild.divergence_threshold = 1e-12;
  GanTrainer trainer(data, tiny_generator(data), tiny_discriminator(data), gp_config(), wild);
  CHECK_THROWS_AS(trainer.step(), DivergenceError);
}

TEST_CASE("critic gap shrinks on a two-class toy set") {
  // 2 classes x 20 samples, T = 16, J = 5, one person, 2000 generator iterations,
  // with the default run sizes (width 32, critic width scale 0.5, batch 16).
  const auto data = tiny_dataset(2, 20, 1, 13);
  auto g = tiny_generator(data, 32);
  g.latent_channels = 32;
  g.heads = 4;
  g.layer_pairs = 2;
  auto t = train_config(16, 13);
  t.max_iterations = 2000;
  GanTrainer trainer(data, g, tiny_discriminator(data, 0.5), gp_config(), t);
  trainer.run();
  const auto& r = trainer.log().records;
  std::vector<double> first, last;
  for (std::size_t i = 0; i < 100; ++i) {
    first.push_back(std::abs(r[i].gap));
    last.push_back(std::abs(r[r.size() - 100 + i].gap));
  }
  MESSAGE("median |gap| first 100: " << median(first) << ", last 100: " << median(last));
  CHECK(median(last) < median(first));  // pilot: 0.295 -> 0.196
}
