#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "oracles.hpp"
#include "vaereg/nets.hpp"
#include "vaereg/nn/layers.hpp"

using namespace vaereg;
using nn::Parameter;

namespace {

// Checks d/dinput and d/dparams of L = sum(W .* forward(x)) against central
// differences, in double.
template <typename Fwd, typename Bwd>
void check_gradients(Fwd forward, Bwd backward, Tensor<double> x,
                     const nn::ParameterRefs<double>& params, std::mt19937_64& rng,
                     double tol = 1e-6) {
  const auto out = forward(x);
  const auto W = oracle::random_tensor(rng, out.shape(), -1, 1);
  for (auto* p : params) p->grad.zero();
  const auto dx = backward(W);
  const auto loss = [&] {
    const auto y = forward(x);
    double s = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) s += W[k] * y[k];
    return s;
  };
  EXPECT_LT(oracle::relative_error(oracle::flatten(dx), oracle::central_difference(loss, x.data(), x.size(), 1e-5)), tol)
      << "input gradient";
  for (auto* p : params) {
    const auto analytic = oracle::flatten(p->grad);
    EXPECT_LT(oracle::relative_error(analytic, oracle::central_difference(loss, p->value.data(), p->value.size(), 1e-5), 1e-3), tol)
        << p->name;
  }
}

}  // namespace

TEST(Conv2d, OutputGeometry) {
  std::mt19937_64 rng(0);
  nn::Conv2d<float> c("c", 3, 5, 4, 2, 1, rng);
  EXPECT_EQ(c.forward(Tensor<float>({2, 16, 12, 3})).shape(), (Shape{2, 8, 6, 5}));
  nn::Conv2d<float> same("s", 3, 4, 3, 1, 1, rng);
  EXPECT_EQ(same.forward(Tensor<float>({1, 7, 9, 3})).shape(), (Shape{1, 7, 9, 4}));
  EXPECT_THROW(c.forward(Tensor<float>({1, 8, 8, 2})), ArgumentError);
}

TEST(Conv2d, MatchesDirectConvolution) {
  std::mt19937_64 rng(1);
  nn::Conv2d<double> c("c", 2, 3, 3, 2, 1, rng);
  nn::ParameterRefs<double> ps;
  c.collect(ps);
  for (auto& v : ps[1]->value.values()) v = 0.25;
  const auto x = oracle::random_tensor(rng, {1, 5, 5, 2}, -1, 1);
  const auto y = c.forward(x);
  const auto& w = ps[0]->value;  // (ky, kx, ci) x co
  for (std::size_t oy = 0; oy < y.dim(1); ++oy)
    for (std::size_t ox = 0; ox < y.dim(2); ++ox)
      for (std::size_t co = 0; co < 3; ++co) {
        double s = 0.25;
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const long iy = static_cast<long>(oy * 2 + ky) - 1, ix = static_cast<long>(ox * 2 + kx) - 1;
            if (iy < 0 || ix < 0 || iy >= 5 || ix >= 5) continue;
            for (std::size_t ci = 0; ci < 2; ++ci)
              s += x.at(0, iy, ix, ci) * w[((ky * 3 + kx) * 2 + ci) * 3 + co];
          }
        EXPECT_NEAR(y.at(0, oy, ox, co), s, 1e-12);
      }
}

TEST(Conv2d, Gradients) {
  std::mt19937_64 rng(2);
  nn::Conv2d<double> c("c", 3, 4, 3, 2, 1, rng);
  nn::ParameterRefs<double> ps;
  c.collect(ps);
  check_gradients([&](const Tensor<double>& x) { return c.forward(x); },
                  [&](const Tensor<double>& d) { return c.backward(d); },
                  oracle::random_tensor(rng, {2, 6, 6, 3}, -1, 1), ps, rng);
}

TEST(ConvTranspose2d, GeometryAndGradients) {
  std::mt19937_64 rng(3);
  nn::ConvTranspose2d<double> c("t", 3, 2, 4, 2, 1, rng);
  EXPECT_EQ(c.forward(Tensor<double>({1, 4, 5, 3})).shape(), (Shape{1, 8, 10, 2}));
  nn::ParameterRefs<double> ps;
  c.collect(ps);
  check_gradients([&](const Tensor<double>& x) { return c.forward(x); },
                  [&](const Tensor<double>& d) { return c.backward(d); },
                  oracle::random_tensor(rng, {2, 3, 3, 3}, -1, 1), ps, rng);
}

TEST(ConvTranspose2d, IsAdjointOfConv) {
  // <conv(x), y> == <x, convT(y)> when both share the same kernel
  std::mt19937_64 rng(4);
  nn::Conv2d<double> c("c", 2, 3, 4, 2, 1, rng);
  nn::ConvTranspose2d<double> t("t", 3, 2, 4, 2, 1, rng);
  nn::ParameterRefs<double> pc, pt;
  c.collect(pc);
  t.collect(pt);
  pc[1]->value.zero();
  pt[1]->value.zero();
  // conv weight rows (ky, kx, ci), cols co; transpose weight rows ci', cols (ky, kx, co')
  for (std::size_t k = 0; k < 16; ++k)
    for (std::size_t ci = 0; ci < 2; ++ci)
      for (std::size_t co = 0; co < 3; ++co)
        pt[0]->value[co * (16 * 2) + k * 2 + ci] = pc[0]->value[(k * 2 + ci) * 3 + co];
  const auto x = oracle::random_tensor(rng, {1, 8, 8, 2}, -1, 1);
  const auto y = oracle::random_tensor(rng, {1, 4, 4, 3}, -1, 1);
  const auto cx = c.forward(x);
  const auto ty = t.forward(y);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t k = 0; k < cx.size(); ++k) lhs += cx[k] * y[k];
  for (std::size_t k = 0; k < x.size(); ++k) rhs += x[k] * ty[k];
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
}

TEST(Dense, Gradients) {
  std::mt19937_64 rng(5);
  nn::Dense<double> d("d", 12, 5, rng);
  nn::ParameterRefs<double> ps;
  d.collect(ps);
  check_gradients([&](const Tensor<double>& x) { return d.forward(x); },
                  [&](const Tensor<double>& g) { return d.backward(g); },
                  oracle::random_tensor(rng, {3, 2, 2, 3}, -1, 1), ps, rng);
}

TEST(GroupNorm, NormalizesEachGroup) {
  std::mt19937_64 rng(6);
  nn::GroupNorm<double> g("g", 4, 2);
  const auto x = oracle::random_tensor(rng, {2, 3, 3, 4}, -5, 5);
  const auto y = g.forward(x);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t grp = 0; grp < 2; ++grp) {
      double s = 0, q = 0;
      for (std::size_t p = 0; p < 9; ++p)
        for (std::size_t c = grp * 2; c < grp * 2 + 2; ++c) {
          const double v = y[(n * 9 + p) * 4 + c];
          s += v;
          q += v * v;
        }
      EXPECT_NEAR(s / 18, 0.0, 1e-12);
      EXPECT_NEAR(q / 18, 1.0, 1e-3);
    }
  EXPECT_THROW(nn::GroupNorm<double>("bad", 6, 4), ArgumentError);
}

TEST(GroupNorm, IndependentOfBatchMates) {
  std::mt19937_64 rng(7);
  nn::GroupNorm<double> g("g", 4, 2);
  auto x = oracle::random_tensor(rng, {2, 2, 2, 4}, -1, 1);
  const auto first = g.forward(x).slice(0, 1);
  for (std::size_t k = 16; k < 32; ++k) x[k] *= 100.0;
  EXPECT_EQ(g.forward(x).slice(0, 1), first);
}

TEST(GroupNorm, Gradients) {
  std::mt19937_64 rng(8);
  nn::GroupNorm<double> g("g", 6, 3);
  nn::ParameterRefs<double> ps;
  g.collect(ps);
  for (auto& v : ps[0]->value.values()) v = 0.5 + std::uniform_real_distribution<double>(0, 1)(rng);
  for (auto& v : ps[1]->value.values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  check_gradients([&](const Tensor<double>& x) { return g.forward(x); },
                  [&](const Tensor<double>& d) { return g.backward(d); },
                  oracle::random_tensor(rng, {2, 3, 2, 6}, -2, 2), ps, rng);
}

TEST(Activations, Gradients) {
  std::mt19937_64 rng(9);
  // keep inputs away from the ReLU kink
  auto x = oracle::random_tensor(rng, {1, 3, 3, 2}, -2, 2);
  for (auto& v : x.values())
    if (std::abs(v) < 1e-2) v = 0.5;
  nn::LeakyReLU<double> lr(0.2);
  check_gradients([&](const Tensor<double>& t) { return lr.forward(t); },
                  [&](const Tensor<double>& d) { return lr.backward(d); }, x, {}, rng);
  nn::Tanh<double> th;
  check_gradients([&](const Tensor<double>& t) { return th.forward(t); },
                  [&](const Tensor<double>& d) { return th.backward(d); }, x, {}, rng);
  nn::Sigmoid<double> sg;
  check_gradients([&](const Tensor<double>& t) { return sg.forward(t); },
                  [&](const Tensor<double>& d) { return sg.backward(d); }, x, {}, rng);
}

TEST(Sigmoid, StaysStrictlyInsideUnitInterval) {
  nn::Sigmoid<float> s;
  const auto y = s.forward(Tensor<float>({3}, std::vector<float>{-200.f, 0.f, 200.f}));
  EXPECT_GT(y[0], 0.f);
  EXPECT_LT(y[2], 1.f);
  EXPECT_EQ(y[1], 0.5f);
}

TEST(FrozenParameters, ReceiveNoGradient) {
  std::mt19937_64 rng(10);
  nn::Conv2d<double> c("c", 2, 2, 3, 1, 1, rng);
  nn::ParameterRefs<double> ps;
  c.collect(ps);
  for (auto* p : ps) p->frozen = true;
  c.forward(oracle::random_tensor(rng, {1, 4, 4, 2}, -1, 1));
  const auto dx = c.backward(oracle::random_tensor(rng, {1, 4, 4, 2}, -1, 1));
  for (auto* p : ps)
    for (double v : p->grad.values()) EXPECT_EQ(v, 0.0);
  double norm = 0;
  for (double v : dx.values()) norm += v * v;
  EXPECT_GT(norm, 0.0);  // the input gradient still flows
}

// whole networks, small sizes, double precision

TEST(Networks, EncoderGradients) {
  std::mt19937_64 rng(11);
  EncoderSpec spec{8, 8, 3, 3, 2, 1, 4, 8};
  Encoder<double> enc(spec, rng);
  const auto x = oracle::random_tensor(rng, {2, 8, 8, 3}, -1, 1);
  const auto p0 = enc.forward(x);
  const auto Wm = oracle::random_matrix(rng, 2, 3, -1, 1), Wl = oracle::random_matrix(rng, 2, 3, -1, 1);
  const auto params = enc.parameters();
  zero_grad(params);
  const auto dx = enc.backward(Wm, Wl);
  Tensor<double> xv = x;
  const auto loss = [&] {
    const auto p = enc.forward(xv);
    return Wm.cwiseProduct(p.mu).sum() + Wl.cwiseProduct(p.log_var).sum();
  };
  EXPECT_LT(oracle::relative_error(oracle::flatten(dx), oracle::central_difference(loss, xv.data(), xv.size(), 1e-5)), 1e-5);
  for (auto* p : params) {
    EXPECT_LT(oracle::relative_error(oracle::flatten(p->grad),
                                     oracle::central_difference(loss, p->value.data(), p->value.size(), 1e-5), 1e-3), 1e-5)
        << p->name;
  }
}

TEST(Networks, DecoderGradients) {
  std::mt19937_64 rng(12);
  EncoderSpec spec{8, 8, 3, 3, 2, 1, 4, 8};
  Decoder<double> dec(spec, rng);
  Matrix<double> z = oracle::random_matrix(rng, 2, 3, -1, 1);
  const auto out = dec.forward(z);
  const auto W = oracle::random_tensor(rng, out.shape(), -1, 1);
  const auto params = dec.parameters();
  zero_grad(params);
  const auto dz = dec.backward(W);
  const auto loss = [&] {
    const auto y = dec.forward(z);
    double s = 0;
    for (std::size_t k = 0; k < y.size(); ++k) s += W[k] * y[k];
    return s;
  };
  EXPECT_LT(oracle::relative_error(oracle::flatten(dz), oracle::central_difference(loss, z.data(), z.size(), 1e-5)), 1e-5);
  for (auto* p : params) {
    EXPECT_LT(oracle::relative_error(oracle::flatten(p->grad),
                                     oracle::central_difference(loss, p->value.data(), p->value.size(), 1e-5), 1e-3), 1e-5)
        << p->name;
  }
}

TEST(Networks, DiscriminatorGradients) {
  std::mt19937_64 rng(13);
  Discriminator<double> d(3, 8, rng);
  const auto params = d.parameters();
  check_gradients([&](const Tensor<double>& x) { return d.forward(x); },
                  [&](const Tensor<double>& g) { return d.backward(g); },
                  oracle::random_tensor(rng, {2, 16, 16, 3}, -1, 1), params, rng, 1e-5);
}
