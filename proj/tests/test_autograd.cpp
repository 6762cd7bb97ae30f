#include "doctest.h"
#include "gradcheck.hpp"

#include "mogen/autograd.hpp"
#include "mogen/nn.hpp"

#include <cmath>
#include <random>

using namespace mogen;
using ag::Shape;
using ag::Tensor;

namespace {

Tensor randn(Shape s, Rng& rng, double sd = 1.0) { return nn::normal_tensor(std::move(s), sd, rng).detach(); }

}  // namespace

TEST_CASE("elementwise ops broadcast and differentiate") {
  Rng rng(1);
  const Tensor a = randn({2, 3}, rng), b = randn({3}, rng);
  const Tensor c = a + b;
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c.at(4) == doctest::Approx(a.at(4) + b.at(1)));
  auto loss = [](const std::vector<Tensor>& x) {
    Tensor y = x[0] * x[1] - x[0] / ag::add_scalar(ag::square(x[1]), 2.0);
    y = ag::exp(ag::scale(ag::tanh(y), 0.5)) + ag::log(ag::add_scalar(ag::square(x[0]), 1.0));
    return ag::sum_all(ag::square(y));
  };
  CHECK(testing::max_grad_error(loss, {a, b}) < 1e-6);
}

TEST_CASE("gelu, leaky relu and sqrt gradients") {
  Rng rng(2);
  const Tensor a = randn({4, 3}, rng);
  auto loss = [](const std::vector<Tensor>& x) {
    return ag::sum_all(ag::gelu(x[0]) * ag::leaky_relu(x[0], 0.2) +
                       ag::sqrt(ag::add_scalar(ag::square(x[0]), 0.5)));
  };
  CHECK(testing::max_grad_error(loss, {a}) < 1e-6);
  const Tensor g = ag::gelu(Tensor::from({3}, {-1.0, 0.0, 1.0}));
  CHECK(g.at(1) == 0.0);
  CHECK(g.at(2) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
}

TEST_CASE("reductions, reshape, permute and matmul gradients") {
  Rng rng(3);
  const Tensor a = randn({2, 3, 4}, rng), w = randn({4, 5}, rng), b = randn({2, 5, 3}, rng);
  auto loss = [](const std::vector<Tensor>& x) {
    Tensor y = ag::matmul(x[0], x[1]);                      // [2,3,5]
    Tensor z = ag::matmul(y, x[2]);                         // [2,3,3]
    Tensor p = ag::permute(ag::reshape(z, {2, 9}), {1, 0});  // [9,2]
    Tensor m = ag::mean(p, 1, true) + ag::sum(p, 0, true);
    return ag::sum_all(ag::square(m)) + ag::mean_all(ag::max_along(z, 2));
  };
  CHECK(testing::max_grad_error(loss, {a, w, b}) < 1e-6);
}

TEST_CASE("transposed matmul matches explicit transpose") {
  Rng rng(4);
  const Tensor a = randn({3, 4}, rng), b = randn({5, 4}, rng);
  const Tensor x = ag::matmul(a, b, false, true);
  const Tensor y = ag::matmul(a, ag::transpose(b, 0, 1));
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(x.at(i) == doctest::Approx(y.at(i)).epsilon(1e-14));
  auto loss = [](const std::vector<Tensor>& t) {
    return ag::sum_all(ag::square(ag::matmul(t[0], t[1], true, false)));
  };
  CHECK(testing::max_grad_error(loss, {randn({4, 3}, rng), randn({4, 2}, rng)}) < 1e-6);
}

TEST_CASE("softmax rows sum to one and differentiate") {
  Rng rng(5);
  const Tensor a = randn({3, 5}, rng);
  const Tensor s = ag::softmax(a);
  for (int r = 0; r < 3; ++r) {
    double total = 0;
    for (int c = 0; c < 5; ++c) total += s.at(r * 5 + c);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  }
  const Tensor w = randn({3, 5}, rng);
  auto loss = [&](const std::vector<Tensor>& x) { return ag::sum_all(ag::softmax(x[0]) * w); };
  CHECK(testing::max_grad_error(loss, {a}) < 1e-6);
}

TEST_CASE("gather, scatter, slice, concat and mix") {
  Rng rng(6);
  const Tensor a = randn({2, 4, 3}, rng);
  const std::vector<std::int64_t> idx{3, -1, 0, 0};
  const Tensor g = ag::gather(a, 1, idx);
  CHECK(g.at(3) == 0.0);  // padded slot
  CHECK(g.at(0) == a.at(9));
  const std::vector<double> m{0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0};
  auto loss = [&](const std::vector<Tensor>& x) {
    Tensor y = ag::gather(x[0], 1, idx);
    Tensor z = ag::scatter_add(y, 1, idx, 5);
    Tensor c = ag::concat({ag::slice(x[0], 1, 1, 2), ag::mix(x[0], 1, m, 2, 4)}, 1);
    return ag::sum_all(ag::square(z)) + ag::sum_all(ag::tanh(c));
  };
  CHECK(testing::max_grad_error(loss, {a}) < 1e-6);
}

TEST_CASE("double backward through a gradient norm") {
  Rng rng(7);
  const Tensor w = randn({3, 4}, rng), x = randn({2, 3}, rng);
  // d/dw of ||d/dx sum(tanh(x w))||^2, which needs second derivatives.
  auto loss = [&](const std::vector<Tensor>& p) {
    Tensor xi = x.detach();
    xi.set_requires_grad(true);
    const Tensor out = ag::sum_all(ag::tanh(ag::matmul(xi, p[0])));
    const auto gx = ag::grad(out, std::vector<Tensor>{xi}, true);
    return ag::sum_all(ag::square(gx[0]));
  };
  CHECK(testing::max_grad_error(loss, {w}) < 1e-6);
}

TEST_CASE("no-grad guard suppresses recording") {
  Tensor a = Tensor::full({2}, 1.0);
  a.set_requires_grad(true);
  {
    ag::NoGradGuard guard;
    CHECK_FALSE((a * a).requires_grad());
  }
  CHECK((a * a).requires_grad());
}

TEST_CASE("unreachable inputs receive zero gradients") {
  Tensor a = Tensor::full({2}, 1.0), b = Tensor::full({3}, 2.0);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  const auto g = ag::grad(ag::sum_all(a * a), std::vector<Tensor>{a, b});
  CHECK(g[0].at(0) == 2.0);
  CHECK(g[1].shape() == Shape{3});
  CHECK(g[1].at(2) == 0.0);
}
