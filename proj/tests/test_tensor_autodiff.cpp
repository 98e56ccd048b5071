#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "gradcheck.hpp"
#include "spars/nn.hpp"
#include "spars/ops.hpp"
#include "spars/tensor.hpp"

using namespace spars;
using ad::backward;
using ad::make_leaf;
using ad::make_var;
using ad::Tensor;
using ad::Var;
using gradcheck::max_rel_err;
using gradcheck::randomize;

namespace {

// Fixed random weighting so any-shaped op output reduces to a scalar loss.
Var<double> weighted_sum(const Var<double>& out, std::mt19937_64& rng) {
  Tensor<double> w(out->value.shape);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (auto& v : w.data) v = dist(rng);
  return ad::sum(ad::mul(out, make_var(std::move(w))));
}

}  // namespace

TEST_CASE("tensor basics and tape mechanics") {
  auto w = make_leaf<double>({3});
  w->value.data = {1.0, 2.0, 3.0};

  SUBCASE("loss = sum(w) has gradient (1,1,1)") {
    auto loss = ad::sum(w);
    backward(loss);
    CHECK(w->grad.data == std::vector<double>{1.0, 1.0, 1.0});
  }
  SUBCASE("loss = w^2 at w=3 has gradient 6") {
    auto s = make_leaf<double>({1});
    s->value.data = {3.0};
    auto loss = ad::mul(s, s);
    backward(loss);
    CHECK(s->grad.data[0] == doctest::Approx(6.0).epsilon(1e-12));
  }
  SUBCASE("a consumed tape cannot be replayed") {
    auto loss = ad::sum(w);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), ad::usage_error);
  }
  SUBCASE("backward requires a scalar loss") {
    auto y = ad::relu(w);
    CHECK_THROWS_AS(backward(y), ad::usage_error);
  }
  SUBCASE("no tape is recorded under NoGradGuard") {
    ad::NoGradGuard no_grad;
    auto y = ad::sum(w);
    CHECK(y->parents.empty());
    CHECK_FALSE(y->requires_grad);
  }
  SUBCASE("shape validation") {
    CHECK_THROWS_AS(Tensor<double>({2, -1}), ad::shape_error);
    CHECK_THROWS_AS(Tensor<double>({2, 2}, std::vector<double>(3)), ad::shape_error);
  }
}

TEST_CASE("conv3d forward values") {
  SUBCASE("all-ones input and kernel, zero bias: centre voxel is 27") {
    auto in = make_var(Tensor<double>({1, 1, 3, 3, 3}, 1.0));
    auto w = make_var(Tensor<double>({1, 1, 3, 3, 3}, 1.0));
    auto b = make_var(Tensor<double>({1}, 0.0));
    auto out = ad::conv3d(in, w, b);
    CHECK(out->value.data[13] == doctest::Approx(27.0));  // centre of 3x3x3
    CHECK(out->value.data[0] == doctest::Approx(8.0));    // corner sees 2x2x2
  }
  SUBCASE("identity kernel reproduces the input") {
    std::mt19937_64 rng(11);
    auto in = make_var(Tensor<double>({1, 1, 4, 5, 6}));
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& v : in->value.data) v = dist(rng);
    auto w = make_var(Tensor<double>({1, 1, 3, 3, 3}, 0.0));
    w->value.data[13] = 1.0;  // centre tap
    auto b = make_var(Tensor<double>({1}, 0.0));
    auto out = ad::conv3d(in, w, b);
    for (std::size_t i = 0; i < in->value.numel(); ++i)
      CHECK(out->value.data[i] == doctest::Approx(in->value.data[i]).epsilon(1e-12));
  }
  SUBCASE("shape errors") {
    auto in = make_var(Tensor<double>({1, 2, 4, 4, 4}));
    auto w = make_var(Tensor<double>({1, 1, 3, 3, 3}));
    auto b = make_var(Tensor<double>({1}));
    CHECK_THROWS_AS(ad::conv3d(in, w, b), ad::shape_error);
  }
}

TEST_CASE("conv3d gradient vs central finite differences") {
  std::mt19937_64 rng(42);
  auto in = make_leaf<double>({2, 2, 4, 4, 4});
  auto w = make_leaf<double>({2, 2, 3, 3, 3});
  auto b = make_leaf<double>({2});
  randomize(in, rng);
  randomize(w, rng);
  randomize(b, rng);
  // freeze the weighting: each rebuild re-seeds from the same state
  std::mt19937_64 wrng(7);
  auto make_loss = [&]() {
    std::mt19937_64 local = wrng;
    return weighted_sum(ad::conv3d(in, w, b), local);
  };
  CHECK(max_rel_err({in, w, b}, make_loss) < 1e-4);
}

TEST_CASE("batchnorm3d values and gradient") {
  SUBCASE("constant input, gamma=1, beta=0 normalizes to zero (train)") {
    auto in = make_var(Tensor<double>({2, 1, 2, 2, 2}, 3.5));
    auto g = make_var(Tensor<double>({1}, 1.0));
    auto bt = make_var(Tensor<double>({1}, 0.0));
    ad::RunningStats<double> stats(1);
    auto out = ad::batchnorm3d(in, g, bt, stats, ad::BNMode::train);
    for (double v : out->value.data) CHECK(v == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("beta=5 shifts the constant output to 5") {
    auto in = make_var(Tensor<double>({2, 1, 2, 2, 2}, 3.5));
    auto g = make_var(Tensor<double>({1}, 1.0));
    auto bt = make_var(Tensor<double>({1}, 5.0));
    ad::RunningStats<double> stats(1);
    auto out = ad::batchnorm3d(in, g, bt, stats, ad::BNMode::train);
    for (double v : out->value.data) CHECK(v == doctest::Approx(5.0).epsilon(1e-9));
  }
  SUBCASE("batch size 1 in train mode is rejected") {
    auto in = make_var(Tensor<double>({1, 1, 2, 2, 2}, 1.0));
    auto g = make_var(Tensor<double>({1}, 1.0));
    auto bt = make_var(Tensor<double>({1}, 0.0));
    ad::RunningStats<double> stats(1);
    CHECK_THROWS_AS(ad::batchnorm3d(in, g, bt, stats, ad::BNMode::train),
                    ad::usage_error);
  }
  SUBCASE("gradient check, train mode") {
    std::mt19937_64 rng(43);
    auto in = make_leaf<double>({2, 2, 3, 3, 3});
    auto g = make_leaf<double>({2});
    auto bt = make_leaf<double>({2});
    randomize(in, rng);
    randomize(g, rng);
    randomize(bt, rng);
    ad::RunningStats<double> stats(2);
    std::mt19937_64 wrng(8);
    auto make_loss = [&]() {
      std::mt19937_64 local = wrng;
      return weighted_sum(ad::batchnorm3d(in, g, bt, stats, ad::BNMode::train), local);
    };
    CHECK(max_rel_err({in, g, bt}, make_loss) < 1e-4);
  }
  SUBCASE("gradient check, eval mode") {
    std::mt19937_64 rng(44);
    auto in = make_leaf<double>({1, 2, 3, 3, 3});
    auto g = make_leaf<double>({2});
    auto bt = make_leaf<double>({2});
    randomize(in, rng);
    randomize(g, rng);
    randomize(bt, rng);
    ad::RunningStats<double> stats(2);
    stats.mean.data = {0.1, -0.2};
    stats.var.data = {0.8, 1.3};
    std::mt19937_64 wrng(9);
    auto make_loss = [&]() {
      std::mt19937_64 local = wrng;
      return weighted_sum(ad::batchnorm3d(in, g, bt, stats, ad::BNMode::eval), local);
    };
    CHECK(max_rel_err({in, g, bt}, make_loss) < 1e-4);
  }
}

TEST_CASE("maxpool3d values and gradient") {
  SUBCASE("block holding 0..7 pools to 7") {
    Tensor<double> t({1, 1, 2, 2, 2});
    for (int i = 0; i < 8; ++i) t.data[i] = i;
    auto out = ad::maxpool3d(make_var(std::move(t)));
    CHECK(out->value.shape == std::vector<int>{1, 1, 1, 1, 1});
    CHECK(out->value.data[0] == doctest::Approx(7.0));
  }
  SUBCASE("tied constant block routes gradient to the first index only") {
    auto in = make_leaf<double>({1, 1, 2, 2, 2});
    std::fill(in->value.data.begin(), in->value.data.end(), 2.0);
    auto loss = ad::sum(ad::maxpool3d(in));
    backward(loss);
    CHECK(in->grad.data[0] == doctest::Approx(1.0));
    for (int i = 1; i < 8; ++i) CHECK(in->grad.data[i] == doctest::Approx(0.0));
  }
  SUBCASE("odd dims replicate-pad: 3x3x3 pools to 2x2x2") {
    auto in = make_var(Tensor<double>({1, 1, 3, 3, 3}, 1.0));
    auto out = ad::maxpool3d(in);
    CHECK(out->value.shape == std::vector<int>{1, 1, 2, 2, 2});
    for (double v : out->value.data) CHECK(v == doctest::Approx(1.0));
  }
  SUBCASE("gradient check on random distinct values") {
    std::mt19937_64 rng(45);
    auto in = make_leaf<double>({2, 2, 4, 4, 4});
    randomize(in, rng);
    std::mt19937_64 wrng(10);
    auto make_loss = [&]() {
      std::mt19937_64 local = wrng;
      return weighted_sum(ad::maxpool3d(in), local);
    };
    CHECK(max_rel_err({in}, make_loss) < 1e-4);
  }
}

TEST_CASE("linear, relu, sigmoid, softmax") {
  SUBCASE("elementwise values") {
    auto x = make_var(Tensor<double>({1, 3}, std::vector<double>{-3.0, 0.0, 3.0}));
    auto r = ad::relu(x);
    CHECK(r->value.data == std::vector<double>{0.0, 0.0, 3.0});
    auto s = ad::sigmoid(x);
    CHECK(s->value.data[1] == doctest::Approx(0.5));
    CHECK(s->value.data[0] == doctest::Approx(1.0 / (1.0 + std::exp(3.0))));
  }
  SUBCASE("softmax of constant logits over 6 entries is uniform") {
    auto x = make_var(Tensor<double>({1, 6}, 2.0));
    auto p = ad::softmax(x);
    for (double v : p->value.data) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  }
  SUBCASE("softmax is invariant to large shifts (stability)") {
    auto x = make_var(Tensor<double>({1, 3}, std::vector<double>{1000.0, 1001.0, 999.0}));
    auto p = ad::softmax(x);
    double total = p->value.data[0] + p->value.data[1] + p->value.data[2];
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p->value.data[1] > p->value.data[0]);
  }
  SUBCASE("linear gradient check") {
    std::mt19937_64 rng(46);
    auto in = make_leaf<double>({3, 5});
    auto w = make_leaf<double>({4, 5});
    auto b = make_leaf<double>({4});
    randomize(in, rng);
    randomize(w, rng);
    randomize(b, rng);
    std::mt19937_64 wrng(11);
    auto make_loss = [&]() {
      std::mt19937_64 local = wrng;
      return weighted_sum(ad::linear(in, w, b), local);
    };
    CHECK(max_rel_err({in, w, b}, make_loss) < 1e-4);
  }
  SUBCASE("sigmoid gradient check") {
    std::mt19937_64 rng(47);
    auto in = make_leaf<double>({2, 6});
    randomize(in, rng);
    std::mt19937_64 wrng(12);
    auto make_loss = [&]() {
      std::mt19937_64 local = wrng;
      return weighted_sum(ad::sigmoid(in), local);
    };
    CHECK(max_rel_err({in}, make_loss) < 1e-4);
  }
  SUBCASE("softmax gradient check") {
    std::mt19937_64 rng(48);
    auto in = make_leaf<double>({3, 6});
    randomize(in, rng);
    std::mt19937_64 wrng(13);
    auto make_loss = [&]() {
      std::mt19937_64 local = wrng;
      return weighted_sum(ad::softmax(in), local);
    };
    CHECK(max_rel_err({in}, make_loss) < 1e-4);
  }
}

TEST_CASE("loss heads") {
  SUBCASE("bce at p=0.5, y=1 is ln 2") {
    auto p = make_var(Tensor<double>({1}, 0.5));
    auto loss = ad::bce_loss(p, std::vector<double>{1.0});
    CHECK(loss->value.data[0] == doctest::Approx(0.693147).epsilon(1e-5));
  }
  SUBCASE("bce at p=1-eps, y=1 is near zero") {
    auto p = make_var(Tensor<double>({1}, 1.0 - 1e-7));
    auto loss = ad::bce_loss(p, std::vector<double>{1.0});
    CHECK(loss->value.data[0] < 1e-6);
  }
  SUBCASE("bce batch p=(0.9,0.2), y=(1,0) equals 0.164252") {
    auto p = make_var(Tensor<double>({2}, std::vector<double>{0.9, 0.2}));
    auto loss = ad::bce_loss(p, std::vector<double>{1.0, 0.0});
    CHECK(loss->value.data[0] == doctest::Approx(0.164252).epsilon(1e-5));
  }
  SUBCASE("bce gradient check") {
    auto p = make_leaf<double>({4});
    p->value.data = {0.2, 0.7, 0.45, 0.9};
    const std::vector<double> y = {1.0, 0.0, 1.0, 1.0};
    auto make_loss = [&]() { return ad::bce_loss(p, y); };
    CHECK(max_rel_err({p}, make_loss) < 1e-4);
  }
  SUBCASE("log_prob_of matches log softmax and its gradient checks out") {
    std::mt19937_64 rng(49);
    auto logits = make_leaf<double>({3, 6});
    randomize(logits, rng);
    const std::vector<int> actions = {2, 0, 5};
    {
      ad::NoGradGuard no_grad;
      auto lp = ad::log_prob_of(logits, actions);
      auto p = ad::softmax(logits);
      for (int n = 0; n < 3; ++n)
        CHECK(lp->value.data[n] ==
              doctest::Approx(std::log(p->value.data[n * 6 + actions[n]])).epsilon(1e-10));
    }
    std::mt19937_64 wrng(14);
    auto make_loss = [&]() {
      std::mt19937_64 local = wrng;
      return weighted_sum(ad::log_prob_of(logits, actions), local);
    };
    CHECK(max_rel_err({logits}, make_loss) < 1e-4);
  }
  SUBCASE("entropy_of_logits value and gradient") {
    auto logits = make_leaf<double>({1, 6});
    std::fill(logits->value.data.begin(), logits->value.data.end(), 0.3);
    {
      ad::NoGradGuard no_grad;
      auto h = ad::entropy_of_logits(logits);
      CHECK(h->value.data[0] == doctest::Approx(std::log(6.0)).epsilon(1e-10));
    }
    std::mt19937_64 rng(50);
    randomize(logits, rng);
    std::mt19937_64 wrng(15);
    auto make_loss = [&]() {
      std::mt19937_64 local = wrng;
      return weighted_sum(ad::entropy_of_logits(logits), local);
    };
    CHECK(max_rel_err({logits}, make_loss) < 1e-4);
  }
  SUBCASE("clipped surrogate gradient check away from clip boundaries") {
    auto lp = make_leaf<double>({4});
    lp->value.data = {-1.0, -1.5, -2.0, -0.5};
    // old log probs chosen so ratios sit well inside / outside the clip band
    const std::vector<double> lp_old = {-1.05, -1.1, -2.0, -0.9};
    const std::vector<double> adv = {0.8, -0.6, 0.5, -0.7};
    auto make_loss = [&]() { return ad::clipped_surrogate(lp, lp_old, adv, 0.2); };
    CHECK(max_rel_err({lp}, make_loss) < 1e-4);
  }
  SUBCASE("clipped surrogate zeroes gradient when clipped out") {
    auto lp = make_leaf<double>({1});
    lp->value.data = {0.0};
    // ratio = e^{0.5} ~ 1.65 > 1.2 with positive advantage: clipped out
    auto loss = ad::clipped_surrogate(lp, std::vector<double>{-0.5},
                                      std::vector<double>{1.0}, 0.2);
    backward(loss);
    CHECK(lp->grad.data[0] == doctest::Approx(0.0));
  }
}

TEST_CASE("trilinear_resize") {
  SUBCASE("same dims returns a bit-equal copy") {
    std::mt19937_64 rng(51);
    Tensor<double> t({1, 3, 4, 5});
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (auto& v : t.data) v = dist(rng);
    auto out = ad::trilinear_resize(t, 3, 4, 5);
    CHECK(out.data == t.data);
  }
  SUBCASE("constant volume stays constant at any size") {
    Tensor<double> t({1, 4, 4, 4}, 0.37);
    auto out = ad::trilinear_resize(t, 7, 3, 9);
    for (double v : out.data) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
  }
  SUBCASE("linear ramp along x doubled matches the analytic ramp") {
    const int W = 8;
    Tensor<double> t({1, 1, 1, W});
    for (int x = 0; x < W; ++x) t.data[x] = static_cast<double>(x);
    auto out = ad::trilinear_resize(t, 1, 1, 2 * W);
    // half-pixel sampling: source coordinate (x + 0.5) * 0.5 - 0.5, clamped
    for (int x = 0; x < 2 * W; ++x) {
      double c = (x + 0.5) * 0.5 - 0.5;
      c = std::clamp(c, 0.0, static_cast<double>(W - 1));
      CHECK(out.data[x] == doctest::Approx(c).epsilon(1e-6));
    }
  }
}

TEST_CASE("whole-network gradient check at 16x16x8") {
  // Classifier trunk in double precision: BCE through sigmoid over logits.
  nn::TrunkNet<double> net({16, 16, 8}, 1, std::mt19937_64(123));
  std::mt19937_64 rng(52);
  auto x = make_var(Tensor<double>({2, 1, 8, 16, 16}));
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (auto& v : x->value.data) v = dist(rng);
  const std::vector<double> labels = {1.0, 0.0};

  auto make_loss = [&]() {
    auto logits = net.forward_logits(x, ad::BNMode::train);
    return ad::bce_loss(ad::sigmoid(logits), labels);
  };

  std::vector<Var<double>> leaves;
  for (const auto& [name, p] : net.params) leaves.push_back(p);
  // probe a sparse deterministic subset of each tensor's coordinates
  CHECK(max_rel_err(leaves, make_loss, 1e-3, 97) < 1e-3);
}

TEST_CASE("adam step and parameter set") {
  ad::ParameterSet<double> params;
  auto w = params.add("w", make_leaf<double>({2}));
  w->value.data = {1.0, -1.0};
  CHECK_THROWS_AS(params.add("w", make_leaf<double>({2})), ad::usage_error);
  CHECK_THROWS_AS(params.at("missing"), ad::usage_error);

  // minimizing 0.5*(w0^2 + w1^2): first Adam step moves by ~lr toward zero
  ad::Adam<double> opt(0.1);
  auto loss = ad::scale(ad::sum(ad::mul(w, w)), 0.5);
  params.zero_grad();
  backward(loss);
  opt.step(params);
  CHECK(w->value.data[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(w->value.data[1] == doctest::Approx(-0.9).epsilon(1e-6));
}
