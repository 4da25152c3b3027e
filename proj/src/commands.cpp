#include "dkcnet/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "dkcnet/errors.hpp"
#include "dkcnet/gradcheck.hpp"
#include "dkcnet/synthetic.hpp"

namespace dkcnet {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
}

std::vector<std::string> class_name_list() {
  return std::vector<std::string>(kClassNames.begin(), kClassNames.end());
}

Model load_model(const std::filesystem::path& checkpoint) {
  return Model::from_checkpoint(load_checkpoint(checkpoint));
}

}  // namespace

std::string PreprocessReport::text() const {
  std::ostringstream os;
  os << "pairs=" << pairs << "\neyes_kept=" << kept << "\neyes_removed=" << removed
     << "\neyes_unmapped=" << unmapped << "\neyes_missing=" << missing << "\n";
  os << std::left << std::setw(8) << "class" << std::right << std::setw(9) << "samples" << "\n";
  for (std::size_t c = 0; c < kNumClasses; ++c)
    os << std::left << std::setw(8) << kClassNames[c] << std::right << std::setw(9) << histogram[c] << "\n";
  return os.str();
}

PreprocessReport cmd_preprocess(const std::filesystem::path& pair_manifest, const KeywordMap& map,
                                const std::filesystem::path& out_dir, std::size_t size) {
  if (size == 0) throw ArgumentError("preprocess: image size must be positive");
  map.validate();
  const auto pairs = read_pair_manifest(pair_manifest);
  SplitSummary split = split_all(pairs, map);

  std::filesystem::create_directories(out_dir / "images");
  for (auto& rec : split.kept) {
    const auto src = resolve_image_path(pair_manifest, rec.image);
    Image img;
    try {
      img = preprocess_image(load_image(src), size);
    } catch (const Error& e) {
      throw DataError("eye " + rec.key() + " (" + src.string() + "): " + e.what());
    }
    rec.image = "images/" + rec.key() + ".png";
    save_image(out_dir / rec.image, img);
  }

  PreprocessReport rep;
  rep.pairs = pairs.size();
  rep.kept = split.kept.size();
  rep.removed = split.removed.size();
  rep.unmapped = split.unmapped.size();
  rep.missing = 2 * pairs.size() - rep.kept - rep.removed - rep.unmapped;
  rep.histogram = split.histogram;
  rep.manifest = out_dir / "eyes.csv";
  write_eye_manifest(rep.manifest, split.kept);
  write_eye_manifest(out_dir / "removed.csv", split.removed);
  write_eye_manifest(out_dir / "unmapped.csv", split.unmapped);
  write_text(out_dir / "preprocess_report.txt", rep.text());
  return rep;
}

std::string BalanceReport::text() const {
  std::ostringstream os;
  os << format_balance_table(plan);
  os << "records_written=" << std::accumulate(after.begin(), after.end(), std::size_t{0}) << "\n";
  return os.str();
}

BalanceReport cmd_balance(const std::filesystem::path& eye_manifest, const BalanceSettings& settings,
                          std::uint64_t seed, const std::filesystem::path& out_path) {
  auto records = read_eye_manifest(eye_manifest);
  BalanceReport rep;
  rep.before = class_counts(records);
  switch (settings.mode) {
    case BalanceMode::kNone: rep.plan = plan_oversample(rep.before, CbfTable{}); break;
    case BalanceMode::kOversample: rep.plan = plan_oversample(rep.before, settings.cbf, settings.rule); break;
    case BalanceMode::kUndersample: rep.plan = plan_undersample(rep.before, settings.cbf); break;
  }
  auto out = execute_balance(records, rep.plan, seed);
  const auto out_dir = std::filesystem::absolute(out_path).parent_path();
  for (auto& r : out) {
    const auto abs = std::filesystem::absolute(resolve_image_path(eye_manifest, r.image));
    r.image = std::filesystem::relative(abs, out_dir).generic_string();
  }
  rep.after = pool_counts(out);
  rep.manifest = out_path;
  write_eye_manifest(out_path, out);
  return rep;
}

LoadedData load_eye_dataset(const std::filesystem::path& eye_manifest, std::size_t size) {
  LoadedData out;
  out.records = read_eye_manifest(eye_manifest);
  if (out.records.empty()) throw DataError(eye_manifest.string() + " has no records");
  std::vector<Image> images;
  images.reserve(out.records.size());
  for (const auto& r : out.records) {
    try {
      images.push_back(materialize(r, eye_manifest, size));
    } catch (const Error& e) {
      throw DataError("record " + r.key() + ": " + e.what());
    }
  }
  out.data.images = to_tensor(images);
  out.data.labels = label_matrix(out.records);
  return out;
}

TrainRun cmd_train(const RunConfig& cfg, const std::filesystem::path& eye_manifest,
                   const std::filesystem::path& out_dir, const std::string& tag,
                   const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  LoadedData loaded = load_eye_dataset(eye_manifest, cfg.model.input_size);
  Model model(cfg.model, cfg.seed);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.threshold = cfg.threshold;

  std::filesystem::create_directories(out_dir);
  TrainRun run;
  run.log = out_dir / (tag + "_log.csv");
  std::ofstream log(run.log, std::ios::binary);
  if (!log) throw IoError("cannot write " + run.log.string());
  log << kTrainLogHeader << "\n";
  run.result = train(model, loaded.data, tc, [&](const EpochLog& e) {
    log << format_epoch_log(e) << "\n";
    log.flush();
    if (on_epoch) on_epoch(e);
  });
  model.params().restore(run.result.best_params);
  run.checkpoint = out_dir / (tag + ".ckpt");
  save_checkpoint(run.checkpoint, model.to_checkpoint());
  return run;
}

EvalRun cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& eye_manifest,
                 double threshold, KappaMode kappa_mode, const std::filesystem::path& out_dir) {
  Model model = load_model(checkpoint);
  LoadedData loaded = load_eye_dataset(eye_manifest, model.config().input_size);
  EvalRun run;
  run.records = std::move(loaded.records);
  run.probabilities = model.predict_proba(loaded.data.images);
  run.report = evaluate(loaded.data.labels, run.probabilities, threshold, kappa_mode);

  std::filesystem::create_directories(out_dir);
  const auto names = class_name_list();
  write_text(out_dir / "metrics.txt", format_report(run.report, names));
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (run.report.per_class[c].auc) write_roc_csv(out_dir / ("roc_" + names[c] + ".csv"), run.report.per_class[c].roc);

  std::ostringstream pred;
  pred << "key";
  for (const auto& n : names) pred << ",p_" << n;
  for (const auto& n : names) pred << ",y_" << n;
  pred << "\n" << std::setprecision(17);
  for (std::size_t i = 0; i < run.records.size(); ++i) {
    pred << run.records[i].key();
    for (std::size_t c = 0; c < kNumClasses; ++c) pred << "," << run.probabilities(i, c);
    for (std::size_t c = 0; c < kNumClasses; ++c) pred << "," << int(run.records[i].label[c]);
    pred << "\n";
  }
  write_text(out_dir / "predictions.csv", pred.str());
  return run;
}

ExplainRun cmd_explain(const std::filesystem::path& checkpoint,
                       const std::filesystem::path& eye_manifest,
                       const std::vector<std::string>& keys, std::optional<std::size_t> cls,
                       CamLayer layer, double threshold, const std::filesystem::path& out_dir,
                       const std::filesystem::path& motifs) {
  Model model = load_model(checkpoint);
  const std::size_t size = model.config().input_size;
  if (cls && *cls >= model.config().num_classes) throw ArgumentError("explain: class index out of range");
  if (!model.config().attention && layer != CamLayer::kBackboneOut) {
    throw ArgumentError(std::string("explain: checkpoint has no ") + cam_layer_name(layer) + " layer");
  }
  std::map<std::string, std::vector<MotifBox>> boxes;
  if (!motifs.empty()) boxes = read_motif_boxes(motifs);

  const std::set<std::string> wanted(keys.begin(), keys.end());
  std::set<std::string> seen;
  ExplainRun run;
  std::filesystem::create_directories(out_dir);
  for (const auto& rec : read_eye_manifest(eye_manifest)) {
    // augmented copies share the key; explain the original only
    if (rec.augmentation.kind != AugmentKind::kNone) continue;
    if (!wanted.empty() && !wanted.count(rec.key())) continue;
    if (!seen.insert(rec.key()).second) continue;
    const Image img = materialize(rec, eye_manifest, size);
    const Matrix probs = model.predict_proba(to_tensor(std::span<const Image>(&img, 1)));

    std::vector<std::size_t> targets;
    if (cls) {
      targets.push_back(*cls);
    } else {
      for (std::size_t c = 0; c < kNumClasses; ++c)
        if (rec.label[c]) targets.push_back(c);
    }
    for (std::size_t c : targets) {
      const Heatmap h = grad_cam(model, img, c, layer);
      const HeatmapFiles f = write_heatmap(out_dir, rec.key(), h, &img);
      run.files.push_back(f.gray);
      run.files.push_back(f.overlay);
      if (layer != CamLayer::kBackboneOut) {
        const Heatmap base = grad_cam(model, img, c, CamLayer::kBackboneOut);
        const auto strip = out_dir / (heatmap_stem(rec.key(), c, layer) + "_compare.png");
        save_image(strip, side_by_side({img, overlay_heatmap(img, base), overlay_heatmap(img, h)}));
        run.files.push_back(strip);
      }
      ++run.maps;

      const auto it = boxes.find(rec.key());
      if (it != boxes.end() && rec.label[c] && probs(0, c) > threshold) {
        ++run.evaluated;
        const auto [py, px] = heatmap_peak(h);
        const bool hit = std::any_of(it->second.begin(), it->second.end(), [&](const MotifBox& b) {
          return b.cls == c && b.contains(py, px);
        });
        if (hit) ++run.localized;
      }
    }
  }
  if (!wanted.empty() && seen.size() != wanted.size()) {
    for (const auto& k : wanted)
      if (!seen.count(k)) throw DataError("explain: no record with key " + k);
  }
  return run;
}

bool VerifyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const VerifyCheck& c) { return c.passed; });
}

std::string VerifyReport::text() const {
  std::ostringstream os;
  for (const auto& c : checks) os << (c.passed ? "PASS " : "FAIL ") << c.name << "  " << c.detail << "\n";
  return os.str();
}

VerifyReport cmd_verify(std::uint64_t seed) {
  VerifyReport rep;
  auto run = [&](const std::string& name, const std::function<std::string(bool&)>& body) {
    VerifyCheck c;
    c.name = name;
    try {
      c.detail = body(c.passed);
    } catch (const std::exception& e) {
      c.passed = false;
      c.detail = std::string("threw: ") + e.what();
    }
    rep.checks.push_back(std::move(c));
  };
  Rng rng(seed);

  run("model_gradient", [&](bool& ok) {
    ModelConfig cfg;
    cfg.backbone.stages = {{8, 2}, {8, 2}};
    cfg.dkc.channels = 8;
    cfg.dkc.reduction = 4;
    cfg.se.channels = 8;
    cfg.se.reduction = 4;
    cfg.input_size = 16;
    Model m(cfg, seed);
    Tensor4 x(Shape{2, 3, 16, 16});
    for (double& v : x.data()) v = rng.uniform();
    Matrix y(2, kNumClasses);
    for (double& v : y.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    std::vector<Var> wrt;
    std::vector<std::string> labels;
    for (const auto& e : m.params().entries()) {
      if (!e.trainable) continue;
      wrt.push_back(e.var);
      labels.push_back(e.name);
    }
    double worst = 0.0;
    ok = true;
    for (Mode mode : {Mode::kTrain, Mode::kEval}) {
      const auto r = finite_diff_check(
          [&] {
            Rng drop(seed + 1);
            return bce_loss(m.forward(Var(x), drop, mode), y);
          },
          wrt, labels, 1e-5, 1e-4);
      ok = ok && r.passed;
      worst = std::max(worst, r.max_rel_error);
    }
    return "max_rel_error=" + std::to_string(worst);
  });

  run("block_shapes", [&](bool& ok) {
    ok = true;
    for (std::size_t c : {8u, 16u, 32u}) {
      ParamStore store;
      DkcConfig dc;
      dc.channels = c;
      dc.reduction = 4;
      SeConfig sc;
      sc.channels = c;
      sc.reduction = 4;
      DkcParams dp = DkcParams::create(dc, store, "dkc", rng);
      SeParams sp = SeParams::create(sc, store, "se", rng);
      Tensor4 x(Shape{2, c, 7, 7});
      for (double& v : x.data()) v = rng.normal();
      const Var out = se_forward(dkc_forward(Var(x), dc, dp, rng, Mode::kTrain), sp);
      ok = ok && out.shape() == x.shape();
    }
    return std::string("C in {8,16,32}, dilations {2,3,4}");
  });

  run("channel_shuffle", [&](bool& ok) {
    ok = true;
    for (std::size_t g : {1u, 2u, 4u}) {
      const auto p = channel_shuffle_permutation(16, g);
      std::vector<std::size_t> sorted = p;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < 16; ++i) ok = ok && sorted[i] == i;
      Tensor4 x(Shape{1, 16, 2, 2});
      for (double& v : x.data()) v = rng.uniform();
      const Var back = channel_shuffle(channel_shuffle(Var(x), g), 16 / g);
      ok = ok && back.value() == x;
    }
    return std::string("bijection and inverse for groups 1, 2, 4");
  });

  run("metric_oracles", [&](bool& ok) {
    ok = true;
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      std::vector<double> y(30), s(30);
      for (std::size_t i = 0; i < 30; ++i) {
        y[i] = i < 10 ? 1.0 : (rng.uniform() < 0.3 ? 1.0 : 0.0);
        s[i] = std::round(rng.uniform() * 8.0) / 8.0;
      }
      y[29] = 0.0;
      double pairs = 0.0, wins = 0.0;
      for (std::size_t i = 0; i < 30; ++i)
        for (std::size_t j = 0; j < 30; ++j)
          if (y[i] == 1.0 && y[j] == 0.0) {
            pairs += 1.0;
            wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
          }
      worst = std::max(worst, std::abs(roc_auc(y, s).auc - wins / pairs));
    }
    ok = worst <= 1e-12;
    return "auc_vs_pairs=" + std::to_string(worst);
  });

  run("bce_spot", [&](bool& ok) {
    Matrix y(1, 2);
    y(0, 0) = 1.0;
    const Var p(Tensor4(Shape{1, 2, 1, 1}, 0.5));
    const double v = bce_loss(p, y).value()[0];
    ok = std::abs(v - std::numbers::ln2) <= 1e-12;
    return "bce=" + std::to_string(v);
  });

  run("oversample_table", [&](bool& ok) {
    const ClassCountsArray counts{1135, 1131, 207, 211, 171, 94, 177, 944};
    const ClassCountsArray expect{1135, 1131, 1035, 1055, 1197, 1128, 1062, 944};
    const BalancePlan plan = plan_oversample(counts, published_oversample_cbf());
    ok = true;
    for (std::size_t c = 0; c < kNumClasses; ++c) ok = ok && plan.classes[c].target == expect[c];
    return std::string("published oversampled counts");
  });

  run("checkpoint_roundtrip", [&](bool& ok) {
    ModelConfig cfg;
    cfg.backbone.stages = {{8, 2}};
    cfg.dkc.channels = 8;
    cfg.dkc.reduction = 4;
    cfg.se.channels = 8;
    cfg.se.reduction = 4;
    cfg.input_size = 8;
    Model m(cfg, seed + 3);
    Tensor4 x(Shape{3, 3, 8, 8});
    for (double& v : x.data()) v = rng.uniform();
    Rng warm(1);
    m.forward(Var(x), warm, Mode::kTrain);
    const auto path = std::filesystem::temp_directory_path() /
                      ("dkcnet_verify_" + std::to_string(seed) + ".ckpt");
    save_checkpoint(path, m.to_checkpoint());
    Model back = Model::from_checkpoint(load_checkpoint(path));
    std::filesystem::remove(path);
    const Matrix a = m.predict_proba(x), b = back.predict_proba(x);
    ok = a.data == b.data;
    return std::string("save, load, eval bitwise");
  });

  return rep;
}

}  // namespace dkcnet
