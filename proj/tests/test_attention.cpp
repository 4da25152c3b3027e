#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "dkcnet/dkc.hpp"
#include "dkcnet/errors.hpp"
#include "dkcnet/gradcheck.hpp"
#include "dkcnet/se.hpp"

using namespace dkcnet;

namespace {

Tensor4 random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor4 t(s);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

DkcConfig small_config(std::size_t c, std::size_t r = 4) {
  DkcConfig cfg;
  cfg.channels = c;
  cfg.reduction = r;
  return cfg;
}

// Puts every batch-norm layer of the block into a state where eval mode works.
void warm_up(const Var& x, const DkcConfig& cfg, DkcParams& p) {
  Rng rng(0);
  dkc_forward(x, cfg, p, rng, Mode::kTrain);
}

}  // namespace

TEST_CASE("channel shuffle: identity for one group") {
  Rng rng(1);
  Var x(random_tensor(Shape{2, 6, 3, 3}, rng));
  CHECK(channel_shuffle(x, 1).value().vector() == x.value().vector());
}

TEST_CASE("channel shuffle: C=6, g=2 order from reshape-transpose enumeration") {
  // lay indices out as a (g, C/g) matrix, read it back column by column
  const std::size_t c = 6, g = 2;
  std::vector<std::vector<std::size_t>> grid(g, std::vector<std::size_t>(c / g));
  std::size_t next = 0;
  for (auto& row : grid)
    for (auto& cell : row) cell = next++;
  std::vector<std::size_t> expected;
  for (std::size_t col = 0; col < c / g; ++col)
    for (std::size_t row = 0; row < g; ++row) expected.push_back(grid[row][col]);
  CHECK(expected == std::vector<std::size_t>{0, 3, 1, 4, 2, 5});
  CHECK(channel_shuffle_permutation(c, g) == expected);

  Tensor4 t(Shape{1, 6, 2, 2});
  for (std::size_t ch = 0; ch < 6; ++ch)
    for (double& v : t.plane(0, ch)) v = static_cast<double>(ch);
  Var y = channel_shuffle(Var(t), 2);
  for (std::size_t j = 0; j < 6; ++j)
    for (double v : y.value().plane(0, j)) CHECK(v == static_cast<double>(expected[j]));
}

TEST_CASE("channel shuffle: inverse groups undo the permutation; bijection") {
  Rng rng(2);
  for (auto [c, g] : {std::pair<std::size_t, std::size_t>{6, 2}, {6, 3}, {8, 2}, {8, 4},
                      {12, 3}, {16, 4}, {32, 2}, {32, 8}}) {
    Var x(random_tensor(Shape{2, c, 3, 2}, rng));
    CHECK(channel_shuffle(channel_shuffle(x, g), c / g).value().vector() == x.value().vector());
    auto perm = channel_shuffle_permutation(c, g);
    std::sort(perm.begin(), perm.end());
    std::vector<std::size_t> all(c);
    std::iota(all.begin(), all.end(), 0);
    CHECK(perm == all);
  }
  CHECK_THROWS_AS(channel_shuffle(Var(Tensor4(Shape{1, 6, 1, 1})), 4), ArgumentError);
}

TEST_CASE("channel shuffle: backward applies the inverse permutation") {
  Rng rng(3);
  auto rep = finite_diff_check([](const Var& v) { return channel_shuffle(v, 3); },
                               random_tensor(Shape{2, 6, 2, 2}, rng), 1e-5, 1e-8);
  CHECK(rep.passed);
}

TEST_CASE("dkc config validation") {
  DkcConfig cfg = small_config(8);
  CHECK_NOTHROW(cfg.validate());
  cfg.groups = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config(8, 16);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config(8);
  cfg.dilations.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config(8);
  cfg.dilations = {2, 0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("dkc branch: shape, zero input, recomposition oracle") {
  Rng rng(4);
  DkcConfig cfg = small_config(8);
  ParamStore store;
  DkcParams p = DkcParams::create(cfg, store, "dkc", rng);
  Var x(random_tensor(Shape{2, 8, 7, 7}, rng));
  for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
    CHECK(dkc_branch(x, cfg, p, i, Mode::kTrain).shape() == x.shape());
  }
  Var zeros(Tensor4(Shape{2, 8, 7, 7}, 0.0));
  for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
    const Var out = dkc_branch(zeros, cfg, p, i, Mode::kTrain);
    for (double v : out.value().vector()) CHECK(v == 0.0);
  }

  // standalone composition with an independent copy of the BN buffers
  for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
    BatchNormBuffers copy = BatchNormBuffers::create(8);
    Var ref = relu(batch_norm(conv2d(x, p.branches[i].kernel, std::nullopt,
                                     ConvOptions{cfg.dilations[i], 1, Padding::kSame}),
                              p.branches[i].gamma, p.branches[i].beta, copy, Mode::kTrain));
    Var got = dkc_branch(x, cfg, p, i, Mode::kTrain);
    for (std::size_t e = 0; e < ref.value().size(); ++e)
      CHECK(std::abs(ref.value()[e] - got.value()[e]) < 1e-12);
  }
  CHECK_THROWS_AS(dkc_branch(Var(Tensor4(Shape{1, 4, 5, 5})), cfg, p, 0, Mode::kTrain),
                  DimensionError);
}

TEST_CASE("dkc fuse") {
  Rng rng(5);
  Var p1(random_tensor(Shape{2, 3, 4, 4}, rng));
  std::vector<Var> same{p1, p1, p1};
  Var f = dkc_fuse(same);
  for (std::size_t e = 0; e < f.value().size(); ++e) CHECK(f.value()[e] == 3.0 * p1.value()[e]);

  Var p2(random_tensor(Shape{2, 3, 4, 4}, rng));
  Var zero(Tensor4(Shape{2, 3, 4, 4}, 0.0));
  std::vector<Var> with_zero{p1, zero, p2};
  std::vector<Var> without{p1, p2};
  CHECK(dkc_fuse(with_zero).value().vector() == dkc_fuse(without).value().vector());

  Var p3(random_tensor(Shape{2, 3, 4, 4}, rng));
  std::vector<Var> three{p1, p2, p3};
  Var s = dkc_fuse(three);
  for (std::size_t e = 0; e < s.value().size(); ++e)
    CHECK(s.value()[e] == (p1.value()[e] + p2.value()[e]) + p3.value()[e]);

  std::vector<Var> bad{p1, Var(Tensor4(Shape{2, 3, 4, 3}))};
  CHECK_THROWS_AS(dkc_fuse(bad), DimensionError);
}

TEST_CASE("dkc squeeze") {
  Var c(Tensor4(Shape{1, 2, 3, 3}, 1.75));
  const Var qc = dkc_squeeze(c);
  for (double v : qc.value().data()) CHECK(v == 3.5);
  Var x(Tensor4(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  CHECK(dkc_squeeze(x).value()[0] == 6.5);

  Rng rng(6);
  const Tensor4 r = random_tensor(Shape{2, 3, 5, 4}, rng);
  const Var q = dkc_squeeze(Var(r));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double s = 0.0, m = r.at(n, ch, 0, 0);
      for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t xx = 0; xx < 4; ++xx) {
          s += r.at(n, ch, y, xx);
          m = std::max(m, r.at(n, ch, y, xx));
        }
      CHECK(q.value().at(n, ch, 0, 0) == m + s / 20.0);
    }
}

TEST_CASE("dkc excite") {
  Rng rng(7);
  DkcConfig cfg = small_config(8);
  ParamStore store;
  DkcParams p = DkcParams::create(cfg, store, "dkc", rng);
  Var q(random_tensor(Shape{3, 8, 1, 1}, rng, -2.0, 2.0));

  ParamStore zstore;
  DkcParams zero = DkcParams::create(cfg, zstore, "z", rng);
  for (const auto& e : zstore.entries())
    if (e.trainable) Var(e.var).mutable_value().fill(0.0);
  Rng r1(1);
  const Var rz = dkc_excite(q, cfg, zero, r1, Mode::kTrain);
  for (double v : rz.value().data()) CHECK(v == 0.5);

  Rng a(2), b(3);
  CHECK(dkc_excite(q, cfg, p, a, Mode::kEval).value().vector() ==
        dkc_excite(q, cfg, p, b, Mode::kEval).value().vector());

  Var ref = sigmoid(fully_connected(relu(fully_connected(q, p.fc1_weight, p.fc1_bias)),
                                    p.fc2_weight, p.fc2_bias));
  const Var got = dkc_excite(q, cfg, p, a, Mode::kEval);
  for (std::size_t e = 0; e < ref.value().size(); ++e) {
    CHECK(std::abs(ref.value()[e] - got.value()[e]) < 1e-12);
    CHECK(got.value()[e] > 0.0);
    CHECK(got.value()[e] < 1.0);
  }
  CHECK_THROWS_AS(dkc_excite(Var(Tensor4(Shape{3, 8, 2, 1})), cfg, p, a, Mode::kEval),
                  DimensionError);
}

TEST_CASE("dkc excite: single-layer layout") {
  Rng rng(8);
  DkcConfig cfg = small_config(8);
  cfg.excitation = ExcitationLayout::kSingleLayer;
  ParamStore store;
  DkcParams p = DkcParams::create(cfg, store, "dkc", rng);
  CHECK(store.get("dkc.fc.weight").shape() == Shape{8, 8, 1, 1});
  Var q(random_tensor(Shape{2, 8, 1, 1}, rng));
  Var ref = sigmoid(fully_connected(q, p.fc1_weight, p.fc1_bias));
  Rng r(1);
  CHECK(dkc_excite(q, cfg, p, r, Mode::kEval).value().vector() == ref.value().vector());
}

TEST_CASE("dkc reweight") {
  Rng rng(9);
  std::vector<Var> branches;
  for (int i = 0; i < 3; ++i) branches.emplace_back(random_tensor(Shape{2, 4, 3, 3}, rng));
  const Var fused = dkc_fuse(branches);

  Var ones(Tensor4(Shape{2, 4, 1, 1}, 1.0));
  CHECK(dkc_reweight(ones, branches).value().vector() == fused.value().vector());
  Var zeros(Tensor4(Shape{2, 4, 1, 1}, 0.0));
  const Var rz = dkc_reweight(zeros, branches);
  for (double v : rz.value().vector()) CHECK(v == 0.0);

  Var r(random_tensor(Shape{2, 4, 1, 1}, rng, 0.0, 1.0));
  const Var lhs = dkc_reweight(r, branches);
  const Var rhs = mul(fused, r);
  for (std::size_t e = 0; e < lhs.value().size(); ++e)
    CHECK(std::abs(lhs.value()[e] - rhs.value()[e]) < 1e-12);

  CHECK_THROWS_AS(dkc_reweight(Var(Tensor4(Shape{2, 3, 1, 1})), branches), DimensionError);
}

TEST_CASE("dkc forward: shape preserved for C in {8,16,32}, h=w in {7,14}") {
  Rng rng(10);
  for (std::size_t c : {8, 16, 32}) {
    for (std::size_t hw : {7, 14}) {
      DkcConfig cfg = small_config(c, c >= 16 ? 16 : 8);
      ParamStore store;
      DkcParams p = DkcParams::create(cfg, store, "dkc", rng);
      Var x(random_tensor(Shape{2, c, hw, hw}, rng));
      for (Mode m : {Mode::kTrain, Mode::kEval}) {
        Rng r(1);
        DkcTrace t = dkc_forward_traced(x, cfg, p, r, m);
        CHECK(t.output.shape() == x.shape());
        CHECK(t.branches.size() == cfg.dilations.size());
        // |S'| <= sum |P_i| because every weight lies in (0, 1)
        for (double w : t.weights.value().data()) {
          CHECK(w > 0.0);
          CHECK(w < 1.0);
        }
        for (std::size_t e = 0; e < x.value().size(); ++e) {
          double bound = 0.0;
          for (const auto& b : t.branches) bound += std::abs(b.value()[e]);
          CHECK(std::abs(t.output.value()[e]) <= bound);
        }
      }
    }
  }
}

TEST_CASE("dkc forward: eval mode is pure") {
  Rng rng(11);
  DkcConfig cfg = small_config(8);
  ParamStore store;
  DkcParams p = DkcParams::create(cfg, store, "dkc", rng);
  Var x(random_tensor(Shape{2, 8, 6, 6}, rng));
  warm_up(x, cfg, p);
  Rng a(1), b(2);
  CHECK(dkc_forward(x, cfg, p, a, Mode::kEval).value().vector() ==
        dkc_forward(x, cfg, p, b, Mode::kEval).value().vector());
}

TEST_CASE("dkc forward: single branch degenerates to one weighted branch") {
  Rng rng(12);
  DkcConfig cfg = small_config(8);
  cfg.dilations = {3};
  ParamStore store;
  DkcParams p = DkcParams::create(cfg, store, "dkc", rng);
  Var x(random_tensor(Shape{2, 8, 5, 5}, rng));
  Rng r(1);
  DkcTrace t = dkc_forward_traced(x, cfg, p, r, Mode::kTrain);
  CHECK(t.fused.value().vector() == t.branches[0].value().vector());
  CHECK(t.output.value().vector() == mul(t.branches[0], t.weights).value().vector());
}

TEST_CASE("dkc forward: saturating excitation bias passes the fused map through") {
  Rng rng(13);
  DkcConfig cfg = small_config(8);
  ParamStore store;
  DkcParams p = DkcParams::create(cfg, store, "dkc", rng);
  p.fc2_weight.mutable_value().fill(0.0);
  p.fc2_bias.mutable_value().fill(20.0);
  Var x(random_tensor(Shape{2, 8, 7, 7}, rng));
  Rng r(1);
  DkcTrace t = dkc_forward_traced(x, cfg, p, r, Mode::kTrain);
  double worst = 0.0;
  for (std::size_t e = 0; e < x.value().size(); ++e)
    worst = std::max(worst, std::abs(t.output.value()[e] - t.fused.value()[e]));
  CHECK(worst < 1e-6);
}

TEST_CASE("dkc forward: gradients of every parameter and the input (eval mode)") {
  Rng rng(14);
  DkcConfig cfg = small_config(8);
  ParamStore store;
  DkcParams p = DkcParams::create(cfg, store, "dkc", rng);
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    Var v = e.var;
    for (double& val : v.mutable_value().data()) val += rng.uniform(-0.2, 0.2);
  }
  Var x(random_tensor(Shape{2, 8, 5, 5}, rng), true);
  warm_up(x, cfg, p);
  std::vector<Var> wrt{x};
  std::vector<std::string> labels{"x"};
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    wrt.push_back(e.var);
    labels.push_back(e.name);
  }
  auto rep = finite_diff_check(
      [&] {
        Rng r(1);
        return sum(dkc_forward(x, cfg, p, r, Mode::kEval));
      },
      wrt, labels, 1e-5, 1e-4);
  INFO("worst=" << rep.worst << " rel=" << rep.max_rel_error);
  CHECK(rep.passed);
}

TEST_CASE("dkc forward: train-mode gradients with a fixed dropout mask") {
  Rng rng(15);
  DkcConfig cfg = small_config(8, 2);
  ParamStore store;
  DkcParams p = DkcParams::create(cfg, store, "dkc", rng);
  Var x(random_tensor(Shape{2, 8, 4, 4}, rng), true);
  std::vector<Var> wrt{x};
  std::vector<std::string> labels{"x"};
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    wrt.push_back(e.var);
    labels.push_back(e.name);
  }
  Tensor4 proj = random_tensor(x.shape(), rng);
  auto rep = finite_diff_check(
      [&] {
        Rng r(42);
        return weighted_sum(dkc_forward(x, cfg, p, r, Mode::kTrain), proj);
      },
      wrt, labels, 1e-5, 1e-4);
  INFO("worst=" << rep.worst << " rel=" << rep.max_rel_error);
  CHECK(rep.passed);
}

TEST_CASE("se: zero parameters halve the input") {
  Rng rng(16);
  SeConfig cfg{8, 4};
  ParamStore store;
  SeParams p = SeParams::create(cfg, store, "se", rng);
  for (const auto& e : store.entries()) Var(e.var).mutable_value().fill(0.0);
  Var x(random_tensor(Shape{2, 8, 3, 3}, rng));
  const Var y = se_forward(x, p);
  for (std::size_t e = 0; e < x.value().size(); ++e) CHECK(y.value()[e] == 0.5 * x.value()[e]);
}

TEST_CASE("se: saturated bias passes input through") {
  Rng rng(17);
  SeConfig cfg{16, 16};
  ParamStore store;
  SeParams p = SeParams::create(cfg, store, "se", rng);
  p.fc2_weight.mutable_value().fill(0.0);
  p.fc2_bias.mutable_value().fill(20.0);
  Var x(random_tensor(Shape{2, 16, 4, 4}, rng, -5.0, 5.0));
  const Var y = se_forward(x, p);
  double worst = 0.0;
  for (std::size_t e = 0; e < x.value().size(); ++e)
    worst = std::max(worst, std::abs(y.value()[e] - x.value()[e]));
  CHECK(worst < 1e-6);
}

TEST_CASE("se: shape, weight range, per-channel uniform scaling") {
  Rng rng(18);
  for (std::size_t c : {8, 16, 32}) {
    SeConfig cfg{c, c >= 16 ? 16 : 8};
    ParamStore store;
    SeParams p = SeParams::create(cfg, store, "se", rng);
    Var x(random_tensor(Shape{3, c, 7, 7}, rng));
    const Var y = se_forward(x, p);
    CHECK(y.shape() == x.shape());
    const Var w = se_weights(x, p);
    for (double v : w.value().data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double ratio0 = y.value().at(n, ch, 0, 0) / x.value().at(n, ch, 0, 0);
        for (std::size_t e = 0; e < 49; ++e)
          CHECK(std::abs(y.value().plane(n, ch)[e] / x.value().plane(n, ch)[e] - ratio0) < 1e-12);
      }
  }
  SeConfig bad{12, 16};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  SeConfig cfg{8, 4};
  ParamStore store;
  SeParams p = SeParams::create(cfg, store, "se", rng);
  CHECK_THROWS_AS(se_forward(Var(Tensor4(Shape{1, 4, 2, 2})), p), DimensionError);
}

TEST_CASE("se: gradient check") {
  Rng rng(19);
  SeConfig cfg{8, 2};
  ParamStore store;
  SeParams p = SeParams::create(cfg, store, "se", rng);
  Var x(random_tensor(Shape{2, 8, 3, 3}, rng), true);
  std::vector<Var> wrt{x};
  std::vector<std::string> labels{"x"};
  for (const auto& e : store.entries()) {
    wrt.push_back(e.var);
    labels.push_back(e.name);
  }
  Tensor4 proj = random_tensor(x.shape(), rng);
  auto rep = finite_diff_check([&] { return weighted_sum(se_forward(x, p), proj); }, wrt, labels,
                               1e-5, 1e-4);
  INFO("worst=" << rep.worst << " rel=" << rep.max_rel_error);
  CHECK(rep.passed);
}
