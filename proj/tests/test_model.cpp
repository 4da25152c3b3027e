#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "dkcnet/errors.hpp"
#include "dkcnet/gradcheck.hpp"
#include "dkcnet/model.hpp"

using namespace dkcnet;

namespace {

ModelConfig tiny_config(bool attention = true) {
  ModelConfig cfg;
  cfg.backbone.stages = {{8, 2}, {8, 2}};
  cfg.attention = attention;
  cfg.dkc.channels = 8;
  cfg.dkc.reduction = 4;
  cfg.se.channels = 8;
  cfg.se.reduction = 4;
  cfg.input_size = 16;
  return cfg;
}

Tensor4 random_images(std::size_t n, std::size_t size, Rng& rng) {
  Tensor4 t(Shape{n, 3, size, size});
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

Matrix random_labels(std::size_t n, std::size_t k, Rng& rng) {
  Matrix m(n, k);
  for (double& v : m.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  return m;
}

Matrix rows_of(const Var& probs) {
  const Shape s = probs.shape();
  return Matrix(s.n, s.c, probs.value().vector());
}

}  // namespace

TEST_CASE("model config validation and JSON round trip") {
  ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  const ModelConfig back = model_config_from_json(model_config_to_json(cfg));
  CHECK(model_config_to_json(back) == model_config_to_json(cfg));
  CHECK(back.backbone.stages.size() == 2);
  CHECK(back.dkc.dilations == std::vector<std::size_t>{2, 3, 4});

  ModelConfig bad = tiny_config();
  bad.dkc.channels = 16;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.se.channels = 16;
  bad.se.reduction = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.backbone.stages.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  // the channel mismatch does not matter without the attention path
  bad = tiny_config(false);
  bad.dkc.channels = 16;
  CHECK_NOTHROW(bad.validate());

  CHECK_THROWS_AS(model_config_from_json("{\"bogus\": 1}"), ConfigError);
  CHECK_THROWS_AS(model_config_from_json("{not json"), ConfigError);
  CHECK(model_config_from_json("{}").input_size == 224);
}

TEST_CASE("default backbone leaves at least 4x4 features for a 224 input") {
  ModelConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.backbone.output_extent(224) >= 4);
  CHECK(cfg.backbone.out_channels() == cfg.dkc.channels);
}

TEST_CASE("model forward: shape, range, input check") {
  Rng rng(1);
  Model m(tiny_config(), 7);
  Var x(random_images(4, 16, rng));
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    Rng r(2);
    ModelTrace t = m.forward_traced(x, r, mode);
    CHECK(t.probs.shape() == Shape{4, 8, 1, 1});
    CHECK(t.backbone_out.shape() == Shape{4, 8, 4, 4});
    CHECK(t.attention_out.shape() == Shape{4, 8, 4, 4});
    CHECK(t.se_out.shape() == Shape{4, 8, 4, 4});
    for (double p : t.probs.value().data()) {
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
  }
  Rng r(3);
  CHECK_THROWS_AS(m.forward(Var(random_images(1, 15, rng)), r, Mode::kEval), DimensionError);

  Model plain(tiny_config(false), 7);
  ModelTrace t = plain.forward_traced(x, r, Mode::kTrain);
  CHECK_FALSE(t.attention_out.defined());
  CHECK_FALSE(t.se_out.defined());
  CHECK(t.probs.shape() == Shape{4, 8, 1, 1});
  CHECK(plain.params().parameter_count() < m.params().parameter_count());
}

TEST_CASE("model forward: identical images give identical rows; batch permutation") {
  Rng rng(4);
  Model m(tiny_config(), 8);
  Tensor4 imgs = random_images(5, 16, rng);
  Rng r(0);
  m.forward(Var(imgs), r, Mode::kTrain);  // populate running statistics

  Tensor4 dup(Shape{2, 3, 16, 16});
  std::vector<std::size_t> twice{1, 1};
  dup = gather_rows(imgs, twice);
  const Matrix d = rows_of(m.forward(Var(dup), r, Mode::kEval));
  for (std::size_t c = 0; c < 8; ++c) CHECK(d(0, c) == d(1, c));

  const Matrix base = rows_of(m.forward(Var(imgs), r, Mode::kEval));
  std::vector<std::size_t> perm{3, 0, 4, 2, 1};
  const Matrix shuffled = rows_of(m.forward(Var(gather_rows(imgs, perm)), r, Mode::kEval));
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < 8; ++c) CHECK(shuffled(i, c) == base(perm[i], c));
}

TEST_CASE("model forward: perturbing one head row only moves that class") {
  Rng rng(5);
  Model m(tiny_config(), 9);
  Tensor4 imgs = random_images(3, 16, rng);
  Rng r(0);
  m.forward(Var(imgs), r, Mode::kTrain);
  const Matrix before = m.predict_proba(imgs);
  Var w = m.params().get("head.weight");
  const std::size_t j = 5;
  for (std::size_t c = 0; c < 8; ++c) w.mutable_value().at(j, c, 0, 0) += 0.7;
  const Matrix after = m.predict_proba(imgs);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 8; ++c) {
      if (c == j) CHECK(after(i, c) != before(i, c));
      else CHECK(after(i, c) == before(i, c));
    }
}

TEST_CASE("bce: spot values") {
  Matrix y(1, 2, std::vector<double>{1, 0});
  Matrix p(1, 2, std::vector<double>{0.5, 0.5});
  CHECK(std::abs(bce_value(y, p) - std::log(2.0)) < 1e-12);

  Matrix yy(2, 2, std::vector<double>{1, 0, 0, 1});
  Matrix pp(2, 2, std::vector<double>{1 - kBceEps, kBceEps, kBceEps, 1 - kBceEps});
  CHECK(bce_value(yy, pp) < 1e-11);

  // fully wrong hard predictions stay finite through the clamp
  Matrix wrong(2, 2, std::vector<double>{0, 1, 1, 0});
  // half the slots clamp up to eps, the other half down to 1 - eps
  const double expect = -(std::log(kBceEps) + std::log1p(-(1.0 - kBceEps))) / 2.0;
  CHECK(bce_value(yy, wrong) == doctest::Approx(expect).epsilon(1e-12));

  Matrix bad(1, 2, std::vector<double>{1, 0.5});
  CHECK_THROWS_AS(bce_value(bad, p), ArgumentError);
  CHECK_THROWS_AS(bce_value(Matrix(1, 3), p), DimensionError);
}

TEST_CASE("bce: scalar-loop oracle, non-negativity, permutation invariance") {
  Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    Matrix y = random_labels(n, 8, rng);
    Matrix p(n, 8);
    for (double& v : p.data) v = rng.uniform();
    double ref = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 8; ++c) {
        const double q = std::min(std::max(p(i, c), 1e-12), 1 - 1e-12);
        ref -= y(i, c) * std::log(q) + (1 - y(i, c)) * std::log(1 - q);
      }
    ref /= static_cast<double>(n * 8);
    const double got = bce_value(y, p);
    CHECK(got >= 0.0);
    CHECK(std::abs(got - ref) < 1e-12);

    if (n > 1) {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::reverse(order.begin(), order.end());
      Matrix yr(n, 8), pr(n, 8);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 8; ++c) {
          yr(i, c) = y(order[i], c);
          pr(i, c) = p(order[i], c);
        }
      CHECK(std::abs(bce_value(yr, pr) - got) < 1e-12);
    }
  }
}

TEST_CASE("bce: gradient with respect to the probabilities") {
  Rng rng(7);
  Matrix y = random_labels(3, 8, rng);
  Tensor4 p(Shape{3, 8, 1, 1});
  for (double& v : p.data()) v = rng.uniform(0.05, 0.95);
  auto rep = finite_diff_check([&](const Var& v) { return bce_loss(v, y); }, p, 1e-6, 1e-6);
  CHECK(rep.passed);
}

TEST_CASE("sgd: update rule, decay schedule, missing gradients") {
  SgdConfig cfg;
  cfg.lr = 0.01;
  cfg.decay = 1e-6;
  CHECK(sgd_learning_rate(cfg, 0) == 0.01);
  CHECK(sgd_learning_rate(cfg, 1000000) == doctest::Approx(0.005).epsilon(1e-15));

  ParamStore store;
  Var a = store.add("a", Tensor4(Shape{1, 2, 1, 1}, std::vector<double>{1.0, -2.0}));
  store.add_existing("buf", Var(Tensor4(Shape{1, 1, 1, 1}, 3.0)), false);
  Sgd opt(cfg);
  CHECK_THROWS_AS(opt.step(store), StateError);

  backward(scale(sum(a), 0.0));
  CHECK(a.has_grad());
  opt.step(store);
  CHECK(a.value().vector() == std::vector<double>{1.0, -2.0});

  // loss = 3a0 + 5a1  ->  gradient (3, 5)
  Var loss = weighted_sum(a, Tensor4(Shape{1, 2, 1, 1}, std::vector<double>{3.0, 5.0}));
  store.zero_grads();
  backward(loss);
  const double lr1 = sgd_learning_rate(cfg, 1);
  opt.step(store);
  CHECK(a.value()[0] == 1.0 - lr1 * 3.0);
  CHECK(a.value()[1] == -2.0 - lr1 * 5.0);
  CHECK(store.get("buf").value().item() == 3.0);
  CHECK(opt.steps() == 2);
}

TEST_CASE("sgd: weight-decay mode and momentum") {
  ParamStore store;
  Var a = store.add("a", Tensor4(Shape{1, 1, 1, 1}, 2.0));
  SgdConfig cfg;
  cfg.lr = 0.1;
  cfg.decay = 0.5;
  cfg.decay_mode = DecayMode::kWeightDecay;
  Sgd wd(cfg);
  backward(scale(sum(a), 0.0));
  wd.step(store);
  CHECK(a.value().item() == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0).epsilon(1e-15));

  Var b = Var(Tensor4(Shape{1, 1, 1, 1}, 0.0), true);
  ParamStore s2;
  s2.add_existing("b", b, true);
  SgdConfig mc;
  mc.lr = 1.0;
  mc.decay = 0.0;
  mc.momentum = 0.5;
  Sgd mom(mc);
  for (int i = 0; i < 3; ++i) {
    s2.zero_grads();
    backward(sum(b));  // gradient 1 every step
    mom.step(s2);
  }
  // velocities 1, 1.5, 1.75
  CHECK(b.value().item() == doctest::Approx(-4.25).epsilon(1e-15));
}

TEST_CASE("end-to-end gradient check on the tiny model") {
  Rng rng(8);
  Model m(tiny_config(), 11);
  // move BN affine terms off their identity initialization so they matter
  for (const auto& e : m.params().entries()) {
    if (!e.trainable) continue;
    Var v = e.var;
    for (double& x : v.mutable_value().data()) x += rng.uniform(-0.1, 0.1);
  }
  Tensor4 imgs = random_images(2, 16, rng);
  Matrix y = random_labels(2, 8, rng);
  std::vector<Var> wrt;
  std::vector<std::string> labels;
  for (const auto& e : m.params().entries()) {
    if (!e.trainable) continue;
    wrt.push_back(e.var);
    labels.push_back(e.name);
  }
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    auto rep = finite_diff_check(
        [&] {
          Rng r(5);
          return bce_loss(m.forward(Var(imgs), r, mode), y);
        },
        wrt, labels, 1e-5, 1e-4);
    INFO("mode=" << (mode == Mode::kTrain ? "train" : "eval") << " worst=" << rep.worst
                 << " rel=" << rep.max_rel_error << " checked=" << rep.checked);
    CHECK(rep.passed);
    CHECK(rep.checked == m.params().parameter_count());
  }
}

TEST_CASE("train: lr = 0 leaves trainable parameters unchanged") {
  Rng rng(9);
  Model m(tiny_config(), 12);
  Dataset d{random_images(10, 16, rng), random_labels(10, 8, rng)};
  const auto before = m.params().snapshot();
  TrainConfig tc;
  tc.sgd.lr = 0.0;
  tc.epochs = 2;
  tc.batch_size = 4;
  TrainResult r = train(m, d, tc);
  CHECK(r.log.size() == 2);
  for (const auto& e : m.params().entries())
    if (e.trainable) CHECK(e.var.value().vector() == before.at(e.name).vector());
}

TEST_CASE("train: identical seeds give bitwise identical runs") {
  Rng rng(10);
  Dataset d{random_images(12, 16, rng), random_labels(12, 8, rng)};
  TrainConfig tc;
  tc.sgd.lr = 0.05;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.seed = 77;
  Model a(tiny_config(), 1), b(tiny_config(), 1);
  TrainResult ra = train(a, d, tc), rb = train(b, d, tc);
  REQUIRE(ra.log.size() == rb.log.size());
  for (std::size_t i = 0; i < ra.log.size(); ++i) {
    CHECK(format_epoch_log(ra.log[i]) == format_epoch_log(rb.log[i]));
  }
  CHECK(a.params().snapshot() == b.params().snapshot());
  CHECK(ra.split.train == rb.split.train);

  tc.seed = 78;
  Model c(tiny_config(), 1);
  TrainResult rc = train(c, d, tc);
  CHECK(rc.log.back().train_loss != ra.log.back().train_loss);
}

TEST_CASE("train: loss goes down on a learnable toy problem") {
  Rng rng(11);
  // class c is on when the mean of channel c % 3 is high
  const std::size_t n = 24;
  Tensor4 imgs(Shape{n, 3, 16, 16});
  Matrix y(n, 3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      y(i, c) = rng.uniform() < 0.5 ? 1.0 : 0.0;
      for (double& v : imgs.plane(i, c)) v = 0.2 + 0.6 * y(i, c) + rng.uniform(-0.1, 0.1);
    }
  ModelConfig cfg = tiny_config();
  cfg.num_classes = 3;
  Model m(cfg, 3);
  TrainConfig tc;
  tc.sgd.lr = 0.2;
  tc.epochs = 30;
  tc.batch_size = 8;
  std::vector<std::string> lines;
  TrainResult r = train(m, Dataset{imgs, y}, tc,
                        [&](const EpochLog& e) { lines.push_back(format_epoch_log(e)); });
  CHECK(lines.size() == 30);
  CHECK(r.log.back().train_loss < 0.8 * r.log.front().train_loss);
  CHECK(r.best_epoch >= 1);
  CHECK(r.best_epoch <= 30);
  CHECK(r.best_params.size() == m.params().entries().size());
  CHECK(r.split.train.size() + r.split.val.size() == n);
}

TEST_CASE("train: errors") {
  Model m(tiny_config(), 1);
  TrainConfig tc;
  Dataset empty{Tensor4(Shape{0, 3, 16, 16}), Matrix(0, 8)};
  CHECK_THROWS_AS(train(m, empty, tc), ArgumentError);
  Rng rng(1);
  Dataset wrong{random_images(2, 16, rng), Matrix(2, 5)};
  CHECK_THROWS_AS(train(m, wrong, tc), DimensionError);
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.train_fraction = 1.0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("checkpoint round trip gives bitwise identical eval forward") {
  Rng rng(12);
  Model m(tiny_config(), 4);
  Dataset d{random_images(6, 16, rng), random_labels(6, 8, rng)};
  TrainConfig tc;
  tc.sgd.lr = 0.05;
  tc.epochs = 1;
  tc.batch_size = 3;
  train(m, d, tc);
  const auto path = std::filesystem::temp_directory_path() / "dkcnet_model_rt.ckpt";
  save_checkpoint(path, m.to_checkpoint());
  Model back = Model::from_checkpoint(load_checkpoint(path));
  std::filesystem::remove(path);
  CHECK(back.predict_proba(d.images).data == m.predict_proba(d.images).data);
  CHECK(back.params().snapshot() == m.params().snapshot());
  CHECK(model_config_to_json(back.config()) == model_config_to_json(m.config()));
}

TEST_CASE("splits") {
  Split s = train_val_split(10, 0.8, 3);
  CHECK(s.train.size() == 8);
  CHECK(s.val.size() == 2);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.val.begin(), s.val.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(10);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(all == expect);
  CHECK(train_val_split(10, 0.8, 3).train == s.train);

  auto folds = kfold_split(23, 5, 1);
  std::vector<int> seen(23, 0);
  for (const auto& f : folds) {
    CHECK(f.train.size() + f.val.size() == 23);
    for (auto i : f.val) ++seen[i];
    for (auto i : f.val) CHECK(std::find(f.train.begin(), f.train.end(), i) == f.train.end());
  }
  for (int v : seen) CHECK(v == 1);
  CHECK_THROWS_AS(kfold_split(3, 5, 1), ArgumentError);
}

TEST_CASE("predictions: strict threshold and comparison oracle") {
  Matrix p(1, 8, std::vector<double>{0.9, 0.1, 0.5, 0.5000001, 0, 1, 0.49, 0.51});
  auto d = decide(p);
  CHECK(d[0].decisions == std::vector<int>{1, 0, 0, 1, 0, 1, 0, 1});
  Rng rng(13);
  Matrix r(50, 8);
  for (double& v : r.data) v = std::round(rng.uniform() * 20) / 20;
  for (double t : {0.25, 0.5, 0.75}) {
    auto dec = decide(r, t);
    for (std::size_t i = 0; i < 50; ++i)
      for (std::size_t c = 0; c < 8; ++c) CHECK(dec[i].decisions[c] == (r(i, c) > t ? 1 : 0));
  }
}

TEST_CASE("merge by group max") {
  Matrix p(4, 2, std::vector<double>{0.1, 0.9, 0.7, 0.2, 0.3, 0.3, 0.4, 0.1});
  std::vector<std::string> g{"p1", "p1", "p2", "p2"};
  std::vector<std::string> order;
  Matrix m = merge_by_group_max(p, g, &order);
  CHECK(order == std::vector<std::string>{"p1", "p2"});
  CHECK(m.data == std::vector<double>{0.7, 0.9, 0.4, 0.3});
}
