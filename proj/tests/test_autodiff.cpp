// test_autodiff.cpp
// The network tape: forward semantics of every op and reverse-mode gradients
// checked against central finite differences.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dgs/autodiff.hpp"
#include "dgs/error.hpp"
#include "dgs/rng.hpp"

#include <cmath>
#include <functional>
#include <vector>

using namespace dgs;

namespace {

Tensor4 random_tensor(Rng& rng, int b, int c, int h, int w, double lo = -1.0, double hi = 1.0) {
  Tensor4 t = Tensor4::zeros(b, c, h, w);
  for (double& v : t.values) v = rng.uniform(lo, hi);
  return t;
}

void randomize_param(ParamStore& store, int index, Rng& rng, double lo = -0.8, double hi = 0.8) {
  for (double& v : store.at(index).value) v = rng.uniform(lo, hi);
}

bool within_tolerance(double analytic, double numeric) {
  const double err = std::abs(analytic - numeric);
  return err <= std::max(1e-3 * std::max(std::abs(analytic), std::abs(numeric)), 1e-8);
}

/**
 * A graph under gradient test: the builder receives the tape and the node ids
 * of `inputs` (tape.input of each, in order) and returns the output node. The
 * loss is a fixed random projection of the output, so every output element
 * contributes to every gradient.
 */
struct GraphCase {
  ParamStore store;
  std::vector<Tensor4> inputs;
  std::function<NodeId(Tape&, const std::vector<NodeId>&)> build;
};

struct FdStats {
  int total = 0;
  int agreeing = 0;
};

FdStats finite_difference_check(GraphCase& g, std::uint64_t seed) {
  const auto run = [&](Tape& tape) {
    std::vector<NodeId> ids;
    ids.reserve(g.inputs.size());
    for (const Tensor4& t : g.inputs) ids.push_back(tape.input(t));
    return g.build(tape, ids);
  };

  Tape tape(&g.store);
  std::vector<NodeId> ids;
  for (const Tensor4& t : g.inputs) ids.push_back(tape.input(t));
  const NodeId out = g.build(tape, ids);

  Rng rng(seed);
  std::vector<double> projection(tape.value(out).size());
  for (double& v : projection) v = rng.uniform(-1.0, 1.0);

  g.store.zero_grads();
  tape.backward(out, projection);
  std::vector<double> analytic_inputs;
  for (std::size_t i = 0; i < g.inputs.size(); ++i) {
    const std::vector<double>& grad = tape.grad(ids[i]);
    if (grad.empty()) {
      analytic_inputs.insert(analytic_inputs.end(), g.inputs[i].size(), 0.0);
    } else {
      analytic_inputs.insert(analytic_inputs.end(), grad.begin(), grad.end());
    }
  }
  const std::vector<double> analytic_params = g.store.flat_grads();

  const auto eval = [&]() {
    Tape fresh(&g.store);
    const NodeId node = run(fresh);
    const std::vector<double>& values = fresh.value(node).values;
    double acc = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) acc += projection[i] * values[i];
    return acc;
  };

  constexpr double kStep = 1e-4;
  FdStats stats;
  const auto check_coordinate = [&](double* coordinate, double analytic) {
    const double saved = *coordinate;
    *coordinate = saved + kStep;
    const double up = eval();
    *coordinate = saved - kStep;
    const double down = eval();
    *coordinate = saved;
    const double numeric = (up - down) / (2.0 * kStep);
    ++stats.total;
    if (within_tolerance(analytic, numeric)) ++stats.agreeing;
  };

  std::size_t cursor = 0;
  for (Tensor4& input : g.inputs) {
    for (std::size_t i = 0; i < input.size(); ++i)
      check_coordinate(&input.values[i], analytic_inputs[cursor + i]);
    cursor += input.size();
  }
  cursor = 0;
  for (int p = 0; p < g.store.count(); ++p) {
    Param& param = g.store.at(p);
    for (std::size_t i = 0; i < param.size(); ++i)
      check_coordinate(&param.value[i], analytic_params[cursor + i]);
    cursor += param.size();
  }
  return stats;
}

void expect_gradients_agree(GraphCase& g, std::uint64_t seed) {
  const FdStats stats = finite_difference_check(g, seed);
  INFO("coordinates ", stats.total, " agreeing ", stats.agreeing);
  REQUIRE(stats.total > 0);
  // At least 99 of every 100 coordinates must match the numeric gradient.
  CHECK(stats.agreeing * 100 >= stats.total * 99);
}

}  // namespace

TEST_CASE("parameter store enforces unique names and round-trips its flat view") {
  ParamStore store;
  const int a = store.add("layer.weight", {2, 3, 1, 1});
  const int b = store.add("layer.bias", {1, 2, 1, 1});
  CHECK(store.count() == 2);
  CHECK(store.total_size() == 8);
  CHECK(store.find("layer.bias") == b);
  CHECK(store.find("missing") == -1);
  CHECK_THROWS_AS(store.add("layer.weight", {1, 1, 1, 1}), Error);

  Rng rng(77);
  randomize_param(store, a, rng);
  randomize_param(store, b, rng);
  const std::vector<double> flat = store.flat_values();
  ParamStore copy;
  copy.add("layer.weight", {2, 3, 1, 1});
  copy.add("layer.bias", {1, 2, 1, 1});
  copy.set_flat_values(flat);
  CHECK(copy.flat_values() == flat);
  CHECK_THROWS_AS(copy.set_flat_values(std::vector<double>(7, 0.0)), Error);
}

TEST_CASE("3x3 convolution matches an independent direct correlation") {
  Rng rng(101);
  ParamStore store;
  const int w = store.add("conv.weight", {2, 3, 3, 3});
  const int b = store.add("conv.bias", {1, 2, 1, 1});
  randomize_param(store, w, rng);
  randomize_param(store, b, rng);
  const Tensor4 x = random_tensor(rng, 2, 3, 4, 5);

  Tape tape(&store);
  const NodeId out = tape.conv2d(tape.input(x), w, b);
  const Tensor4& y = tape.value(out);
  REQUIRE(y.batch == 2);
  REQUIRE(y.channels == 2);
  REQUIRE(y.height == 4);
  REQUIRE(y.width == 5);

  const Param& weight = store.at(w);
  const Param& bias = store.at(b);
  for (int n = 0; n < 2; ++n) {
    for (int oc = 0; oc < 2; ++oc) {
      for (int yy = 0; yy < 4; ++yy) {
        for (int xx = 0; xx < 5; ++xx) {
          double expected = bias.value[static_cast<std::size_t>(oc)];
          for (int ic = 0; ic < 3; ++ic) {
            for (int ky = -1; ky <= 1; ++ky) {
              for (int kx = -1; kx <= 1; ++kx) {
                const int iy = yy + ky, ix = xx + kx;
                if (iy < 0 || iy >= 4 || ix < 0 || ix >= 5) continue;
                expected += x.at(n, ic, iy, ix) *
                            weight.value[((static_cast<std::size_t>(oc) * 3 + ic) * 3 +
                                          (ky + 1)) *
                                             3 +
                                         (kx + 1)];
              }
            }
          }
          CHECK(y.at(n, oc, yy, xx) == doctest::Approx(expected).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("convolution gradients match finite differences") {
  SUBCASE("3x3 with bias") {
    Rng rng(202);
    GraphCase g;
    const int w = g.store.add("conv.weight", {4, 3, 3, 3});
    const int b = g.store.add("conv.bias", {1, 4, 1, 1});
    randomize_param(g.store, w, rng);
    randomize_param(g.store, b, rng);
    g.inputs.push_back(random_tensor(rng, 2, 3, 4, 5));
    g.build = [w, b](Tape& t, const std::vector<NodeId>& in) { return t.conv2d(in[0], w, b); };
    expect_gradients_agree(g, 11);
  }
  SUBCASE("1x1 without bias") {
    Rng rng(203);
    GraphCase g;
    const int w = g.store.add("proj.weight", {5, 4, 1, 1});
    randomize_param(g.store, w, rng);
    g.inputs.push_back(random_tensor(rng, 3, 4, 3, 3));
    g.build = [w](Tape& t, const std::vector<NodeId>& in) { return t.conv2d(in[0], w, -1); };
    expect_gradients_agree(g, 12);
  }
}

TEST_CASE("kernel sizes other than 1 and 3 are rejected as unsupported ops") {
  ParamStore store;
  const int w = store.add("conv.weight", {2, 2, 2, 2});
  Tape tape(&store);
  const NodeId x = tape.input(Tensor4::zeros(1, 2, 4, 4));
  CHECK_THROWS_WITH_AS(tape.conv2d(x, w, -1),
                       doctest::Contains("unsupported op"), Error);
  try {
    tape.conv2d(x, w, -1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invalid_input);
  }
}

TEST_CASE("group normalization standardizes each group and matches finite differences") {
  Rng rng(303);
  ParamStore store;
  const int gain = store.add("norm.gain", {1, 8, 1, 1});
  const int shift = store.add("norm.shift", {1, 8, 1, 1});
  for (double& v : store.at(gain).value) v = 1.0;
  const Tensor4 x = random_tensor(rng, 2, 8, 3, 4, -2.0, 2.0);

  Tape tape(&store);
  const NodeId out = tape.group_norm(tape.input(x), gain, shift, 4);
  const Tensor4& y = tape.value(out);

  // Unit gain, zero shift: every (sample, group) slab has mean ~0, variance ~1.
  for (int n = 0; n < 2; ++n) {
    for (int g = 0; g < 4; ++g) {
      double mean = 0.0, var = 0.0;
      for (int c = 2 * g; c < 2 * g + 2; ++c)
        for (int yy = 0; yy < 3; ++yy)
          for (int xx = 0; xx < 4; ++xx) mean += y.at(n, c, yy, xx);
      mean /= 24.0;
      for (int c = 2 * g; c < 2 * g + 2; ++c)
        for (int yy = 0; yy < 3; ++yy)
          for (int xx = 0; xx < 4; ++xx) {
            const double d = y.at(n, c, yy, xx) - mean;
            var += d * d;
          }
      var /= 24.0;
      CHECK(std::abs(mean) < 1e-10);
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps keeps it just below 1
    }
  }

  SUBCASE("constant input collapses to the shift") {
    Rng r2(304);
    ParamStore s2;
    const int g2 = s2.add("norm.gain", {1, 4, 1, 1});
    const int b2 = s2.add("norm.shift", {1, 4, 1, 1});
    randomize_param(s2, g2, r2);
    randomize_param(s2, b2, r2);
    Tape t2(&s2);
    const NodeId o2 = t2.group_norm(t2.input(Tensor4::zeros(1, 4, 2, 2)), g2, b2, 2);
    const Tensor4& y2 = t2.value(o2);
    for (int c = 0; c < 4; ++c)
      for (int yy = 0; yy < 2; ++yy)
        for (int xx = 0; xx < 2; ++xx)
          CHECK(y2.at(0, c, yy, xx) ==
                doctest::Approx(s2.at(b2).value[static_cast<std::size_t>(c)]).epsilon(1e-12));
  }

  SUBCASE("gradients") {
    Rng r3(305);
    GraphCase g;
    const int gg = g.store.add("norm.gain", {1, 8, 1, 1});
    const int ss = g.store.add("norm.shift", {1, 8, 1, 1});
    randomize_param(g.store, gg, r3, 0.5, 1.5);
    randomize_param(g.store, ss, r3);
    g.inputs.push_back(random_tensor(r3, 2, 8, 3, 4, -2.0, 2.0));
    g.build = [gg, ss](Tape& t, const std::vector<NodeId>& in) {
      return t.group_norm(in[0], gg, ss, 4);
    };
    expect_gradients_agree(g, 13);
  }
}

TEST_CASE("nonlinearities hit their anchor values and match finite differences") {
  ParamStore store;
  Tape tape(&store);
  Tensor4 probe = Tensor4::zeros(1, 1, 1, 3);
  probe.values = {0.0, 1.0, -1.0};
  const NodeId x = tape.input(probe);
  CHECK(tape.value(tape.silu(x)).values[0] == 0.0);
  CHECK(tape.value(tape.sigmoid(x)).values[0] == 0.5);
  CHECK(tape.value(tape.tanh(x)).values[0] == 0.0);
  CHECK(tape.value(tape.silu(x)).values[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  CHECK(tape.value(tape.tanh(x)).values[2] == doctest::Approx(std::tanh(-1.0)));

  for (const int which : {0, 1, 2}) {
    CAPTURE(which);
    Rng rng(404 + static_cast<std::uint64_t>(which));
    GraphCase g;
    g.inputs.push_back(random_tensor(rng, 2, 3, 3, 3, -2.0, 2.0));
    g.build = [which](Tape& t, const std::vector<NodeId>& in) {
      if (which == 0) return t.silu(in[0]);
      if (which == 1) return t.sigmoid(in[0]);
      return t.tanh(in[0]);
    };
    expect_gradients_agree(g, 14 + static_cast<std::uint64_t>(which));
  }
}

TEST_CASE("nearest-neighbor resampling routes samples exactly") {
  ParamStore store;
  Tape tape(&store);
  Tensor4 x = Tensor4::zeros(1, 1, 4, 4);
  for (int i = 0; i < 16; ++i) x.values[static_cast<std::size_t>(i)] = i;
  const NodeId in = tape.input(x);

  const Tensor4& down = tape.value(tape.down2(in));
  REQUIRE(down.height == 2);
  REQUIRE(down.width == 2);
  CHECK(down.values == std::vector<double>{0.0, 2.0, 8.0, 10.0});  // top-left of each cell

  const Tensor4& up = tape.value(tape.up2(in));
  REQUIRE(up.height == 8);
  CHECK(up.at(0, 0, 0, 0) == 0.0);
  CHECK(up.at(0, 0, 0, 1) == 0.0);
  CHECK(up.at(0, 0, 1, 1) == 0.0);
  CHECK(up.at(0, 0, 2, 2) == 1.0);
  CHECK(up.at(0, 0, 7, 7) == 15.0);

  CHECK_THROWS_AS(tape.down2(tape.input(Tensor4::zeros(1, 1, 3, 4))), Error);

  SUBCASE("gradients") {
    for (const bool upsample : {false, true}) {
      CAPTURE(upsample);
      Rng rng(505);
      GraphCase g;
      g.inputs.push_back(random_tensor(rng, 2, 2, 4, 4));
      g.build = [upsample](Tape& t, const std::vector<NodeId>& in) {
        return upsample ? t.up2(in[0]) : t.down2(in[0]);
      };
      expect_gradients_agree(g, upsample ? 17 : 18);
    }
  }
}

TEST_CASE("channel concat keeps both operands in order and splits gradients") {
  Rng rng(606);
  ParamStore store;
  Tape tape(&store);
  const Tensor4 a = random_tensor(rng, 2, 2, 3, 3);
  const Tensor4 b = random_tensor(rng, 2, 3, 3, 3);
  const NodeId out = tape.concat(tape.input(a), tape.input(b));
  const Tensor4& y = tape.value(out);
  REQUIRE(y.channels == 5);
  for (int n = 0; n < 2; ++n)
    for (int yy = 0; yy < 3; ++yy)
      for (int xx = 0; xx < 3; ++xx) {
        for (int c = 0; c < 2; ++c) CHECK(y.at(n, c, yy, xx) == a.at(n, c, yy, xx));
        for (int c = 0; c < 3; ++c) CHECK(y.at(n, 2 + c, yy, xx) == b.at(n, c, yy, xx));
      }
  CHECK_THROWS_AS(tape.concat(tape.input(a), tape.input(Tensor4::zeros(1, 1, 3, 3))), Error);

  GraphCase g;
  g.inputs.push_back(a);
  g.inputs.push_back(b);
  g.build = [](Tape& t, const std::vector<NodeId>& in) { return t.concat(in[0], in[1]); };
  expect_gradients_agree(g, 19);
}

TEST_CASE("softmax attention averages values under identical keys") {
  Rng rng(707);
  ParamStore store;
  Tape tape(&store);
  const Tensor4 q = random_tensor(rng, 4, 3, 2, 2);
  Tensor4 k = Tensor4::zeros(4, 3, 2, 2);
  for (int n = 0; n < 4; ++n)
    for (int c = 0; c < 3; ++c)
      for (int yy = 0; yy < 2; ++yy)
        for (int xx = 0; xx < 2; ++xx) k.at(n, c, yy, xx) = 0.3 * c - 0.1 * yy;  // same per view
  const Tensor4 v = random_tensor(rng, 4, 3, 2, 2);

  const NodeId out = tape.attention(tape.input(q), tape.input(k), tape.input(v));
  const Tensor4& y = tape.value(out);
  // All keys equal => uniform weights => every view receives the view-mean.
  for (int c = 0; c < 3; ++c)
    for (int yy = 0; yy < 2; ++yy)
      for (int xx = 0; xx < 2; ++xx) {
        double mean = 0.0;
        for (int n = 0; n < 4; ++n) mean += v.at(n, c, yy, xx);
        mean /= 4.0;
        for (int n = 0; n < 4; ++n)
          CHECK(y.at(n, c, yy, xx) == doctest::Approx(mean).epsilon(1e-12));
      }
}

TEST_CASE("softmax attention gradients match finite differences") {
  Rng rng(708);
  GraphCase g;
  g.inputs.push_back(random_tensor(rng, 4, 5, 2, 2));
  g.inputs.push_back(random_tensor(rng, 4, 5, 2, 2));
  g.inputs.push_back(random_tensor(rng, 4, 5, 2, 2));
  g.build = [](Tape& t, const std::vector<NodeId>& in) {
    return t.attention(in[0], in[1], in[2]);
  };
  expect_gradients_agree(g, 20);
}

TEST_CASE("addition accumulates gradients into both operands") {
  Rng rng(808);
  GraphCase g;
  g.inputs.push_back(random_tensor(rng, 2, 2, 2, 2));
  g.inputs.push_back(random_tensor(rng, 2, 2, 2, 2));
  g.build = [](Tape& t, const std::vector<NodeId>& in) { return t.add(in[0], in[1]); };
  expect_gradients_agree(g, 21);
}

TEST_CASE("a detached branch receives no gradient") {
  Rng rng(909);
  ParamStore store;
  Tape tape(&store);
  const NodeId x = tape.input(random_tensor(rng, 1, 2, 3, 3));
  const NodeId used = tape.silu(x);
  const NodeId detached = tape.tanh(x);

  std::vector<double> seed(tape.value(used).size(), 1.0);
  tape.backward(used, seed);

  CHECK(tape.grad(detached).empty());
  REQUIRE_FALSE(tape.grad(x).empty());
  double sum = 0.0;
  for (double v : tape.grad(x)) sum += std::abs(v);
  CHECK(sum > 0.0);
}

TEST_CASE("a graph composing every op matches finite differences end to end") {
  Rng rng(1010);
  GraphCase g;
  const int cw = g.store.add("stem.weight", {8, 4, 3, 3});
  const int cb = g.store.add("stem.bias", {1, 8, 1, 1});
  const int gain = g.store.add("norm.gain", {1, 8, 1, 1});
  const int shift = g.store.add("norm.shift", {1, 8, 1, 1});
  const int qw = g.store.add("query.weight", {8, 8, 1, 1});
  const int kw = g.store.add("key.weight", {8, 8, 1, 1});
  const int vw = g.store.add("value.weight", {8, 8, 1, 1});
  const int hw = g.store.add("head.weight", {3, 16, 1, 1});
  const int hb = g.store.add("head.bias", {1, 3, 1, 1});
  randomize_param(g.store, cw, rng, -0.4, 0.4);
  randomize_param(g.store, cb, rng, -0.2, 0.2);
  randomize_param(g.store, gain, rng, 0.6, 1.4);
  randomize_param(g.store, shift, rng, -0.2, 0.2);
  randomize_param(g.store, qw, rng, -0.4, 0.4);
  randomize_param(g.store, kw, rng, -0.4, 0.4);
  randomize_param(g.store, vw, rng, -0.4, 0.4);
  randomize_param(g.store, hw, rng, -0.4, 0.4);
  randomize_param(g.store, hb, rng, -0.2, 0.2);
  g.inputs.push_back(random_tensor(rng, 4, 4, 4, 4));
  g.build = [=](Tape& t, const std::vector<NodeId>& in) {
    NodeId x = t.conv2d(in[0], cw, cb);
    x = t.group_norm(x, gain, shift, 4);
    const NodeId skip = t.silu(x);
    x = t.down2(skip);
    const NodeId attended =
        t.attention(t.conv2d(x, qw, -1), t.conv2d(x, kw, -1), t.conv2d(x, vw, -1));
    x = t.add(x, attended);
    x = t.up2(x);
    x = t.concat(x, skip);
    x = t.conv2d(x, hw, hb);
    x = t.sigmoid(x);
    return t.tanh(x);
  };
  expect_gradients_agree(g, 22);
}
