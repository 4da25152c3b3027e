#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dkcnet/commands.hpp"
#include "dkcnet/errors.hpp"
#include "dkcnet/synthetic.hpp"

using namespace dkcnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitVerify = 3;

// "N=0,D=0,G=5,..." ; classes left out keep 0
CbfTable parse_cbf(const std::string& text) {
  CbfTable t{};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("cbf entries look like CLASS=k, got '" + item + "'");
    const auto cls = class_index(item.substr(0, eq));
    if (!cls) throw ConfigError("unknown class in cbf: '" + item.substr(0, eq) + "'");
    try {
      const long long k = std::stoll(item.substr(eq + 1));
      if (k < 0) throw ConfigError("cbf factors must be non-negative");
      t[*cls] = static_cast<std::size_t>(k);
    } catch (const std::logic_error&) {
      throw ConfigError("bad cbf factor in '" + item + "'");
    }
  }
  return t;
}

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

RunConfig resolve(const Globals& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  return cfg;
}

void print_epoch(const EpochLog& e) {
  std::printf("epoch %zu  loss %.6f  val_auc %.4f  val_f1 %.4f  val_kappa %.4f\n", e.epoch, e.train_loss,
              e.val_auc, e.val_f1, e.val_kappa);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-label fundus classifier with dilated-kernel attention"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--seed", g.seed, "Seed for every random choice (overrides the config)");
  app.add_option("--out-dir", g.out_dir, "Directory receiving all outputs (overrides the config)");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic fundus corpus");
  std::size_t synth_n = 8, synth_size = 64;
  double synth_composites = 0.0, synth_artifacts = 0.0, synth_motif = 0.25;
  synth->add_option("--n-per-class", synth_n, "Single-label images per class")->check(CLI::PositiveNumber);
  synth->add_option("--size", synth_size, "Image side in pixels")->check(CLI::Range(8, 4096));
  synth->add_option("--composites", synth_composites, "Two-label composites as a fraction of the single-label count")
      ->check(CLI::Range(0.0, 10.0));
  synth->add_option("--artifacts", synth_artifacts, "Fraction of eyes tagged with a removal phrase")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--motif-fraction", synth_motif, "Motif side relative to the image side")
      ->check(CLI::Range(0.05, 0.5));

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Split pairs into eyes, filter artifacts, crop and resize");
  std::string pre_manifest, pre_map;
  std::optional<std::size_t> pre_size;
  pre->add_option("--manifest", pre_manifest, "Pair sheet (defaults to the config's manifest)");
  pre->add_option("--keyword-map", pre_map, "Keyword map file (defaults to the built-in map)");
  pre->add_option("--size", pre_size, "Output side in pixels (defaults to model.input_size)");

  // balance
  auto* bal = app.add_subcommand("balance", "Over- or undersample an eye sheet");
  std::string bal_manifest, bal_mode, bal_cbf, bal_rule;
  bool bal_published = false;
  bal->add_option("--manifest", bal_manifest, "Eye sheet written by preprocess");
  bal->add_option("--mode", bal_mode, "none, over or under")->check(CLI::IsMember({"none", "over", "under"}));
  bal->add_option("--cbf", bal_cbf, "Per-class factors, e.g. G=5,C=5,A=7,H=12,M=6");
  bal->add_option("--rule", bal_rule, "Oversampling rule: table or literal")->check(CLI::IsMember({"table", "literal"}));
  bal->add_flag("--published", bal_published, "Use the published factors for the chosen mode");

  // train
  auto* tr = app.add_subcommand("train", "Train and write a checkpoint plus an epoch log");
  std::string tr_manifest, tr_ablation;
  std::optional<std::size_t> tr_epochs, tr_batch;
  std::optional<double> tr_lr;
  tr->add_option("--manifest", tr_manifest, "Eye sheet to train on");
  tr->add_option("--ablation", tr_ablation, "backbone (backbone only), dkcnet (with DKC and SE) or both")
      ->check(CLI::IsMember({"backbone", "dkcnet", "both"}));
  tr->add_option("--epochs", tr_epochs);
  tr->add_option("--batch-size", tr_batch);
  tr->add_option("--lr", tr_lr);

  // eval
  auto* ev = app.add_subcommand("eval", "Score an eye sheet with a checkpoint");
  std::string ev_ckpt, ev_manifest;
  std::optional<double> ev_thr;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--manifest", ev_manifest, "Eye sheet to score");
  ev->add_option("--threshold", ev_thr);

  // explain
  auto* ex = app.add_subcommand("explain", "Grad-CAM heatmaps for selected eyes");
  std::string ex_ckpt, ex_manifest, ex_class, ex_layer, ex_motifs;
  std::vector<std::string> ex_ids;
  ex->add_option("--checkpoint", ex_ckpt)->required();
  ex->add_option("--manifest", ex_manifest, "Eye sheet holding the images");
  ex->add_option("--ids", ex_ids, "Eye keys such as 12_left (default: all)");
  ex->add_option("--class", ex_class, "Class name; default: every positive label");
  ex->add_option("--layer", ex_layer, "backbone_out, attention_out or se_out");
  ex->add_option("--motifs", ex_motifs, "Motif box sheet for a localization score");

  // verify
  auto* ver = app.add_subcommand("verify", "Run the gradient, shape and oracle self-checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig cfg = resolve(g);
    const std::filesystem::path out = cfg.out_dir;
    auto manifest_or = [&](const std::string& flag) {
      std::filesystem::path p = flag.empty() ? cfg.manifest : std::filesystem::path(flag);
      if (p.empty()) throw ConfigError("no manifest given (use --manifest or the config's manifest)");
      return p;
    };

    if (*synth) {
      SyntheticOptions opt;
      opt.size = synth_size;
      opt.composite_fraction = synth_composites;
      opt.motif_fraction = synth_motif;
      const auto corpus = write_synthetic_corpus(out / "synthetic", synth_n, cfg.seed, opt, synth_artifacts);
      std::printf("pairs=%zu artifact_eyes=%zu\nmanifest=%s\nmotifs=%s\n", corpus.pairs, corpus.artifact_eyes,
                  corpus.manifest.string().c_str(), corpus.motifs.string().c_str());
    } else if (*pre) {
      if (!pre_map.empty()) cfg.keyword_map = pre_map;
      const auto manifest = manifest_or(pre_manifest);
      cfg.validate();
      const KeywordMap map = cfg.keyword_map.empty() ? default_keyword_map() : load_keyword_map(cfg.keyword_map);
      const auto rep = cmd_preprocess(manifest, map, out / "processed", pre_size.value_or(cfg.model.input_size));
      std::printf("%smanifest=%s\n", rep.text().c_str(), rep.manifest.string().c_str());
    } else if (*bal) {
      if (!bal_mode.empty()) cfg.balance.mode = parse_balance_mode(bal_mode);
      if (!bal_rule.empty()) cfg.balance.rule = bal_rule == "literal" ? OversampleRule::kLiteral : OversampleRule::kTableConsistent;
      if (bal_published) {
        cfg.balance.cbf = cfg.balance.mode == BalanceMode::kUndersample ? published_undersample_cbf()
                                                                         : published_oversample_cbf();
      }
      if (!bal_cbf.empty()) cfg.balance.cbf = parse_cbf(bal_cbf);
      const auto manifest = manifest_or(bal_manifest);
      cfg.validate();
      const auto target = out / ("balanced_" + std::string(balance_mode_name(cfg.balance.mode)) + ".csv");
      const auto rep = cmd_balance(manifest, cfg.balance, cfg.seed, target);
      std::printf("%smanifest=%s\n", rep.text().c_str(), rep.manifest.string().c_str());
    } else if (*tr) {
      if (tr_epochs) cfg.train.epochs = *tr_epochs;
      if (tr_batch) cfg.train.batch_size = *tr_batch;
      if (tr_lr) cfg.train.sgd.lr = *tr_lr;
      const auto manifest = manifest_or(tr_manifest);
      std::vector<bool> modes;
      if (tr_ablation == "both") modes = {false, true};
      else if (tr_ablation == "backbone") modes = {false};
      else if (tr_ablation == "dkcnet") modes = {true};
      else modes = {cfg.model.attention};
      for (bool attention : modes) {
        RunConfig run_cfg = cfg;
        run_cfg.model.attention = attention;
        if (!attention) run_cfg.cam_layer = CamLayer::kBackboneOut;
        const std::string tag = attention ? "dkcnet" : "backbone";
        std::printf("== training %s ==\n", tag.c_str());
        const auto run = cmd_train(run_cfg, manifest, out, tag, print_epoch);
        std::printf("best_epoch=%zu best_val_auc=%.6f\ncheckpoint=%s\nlog=%s\n", run.result.best_epoch,
                    run.result.best_val_auc, run.checkpoint.string().c_str(), run.log.string().c_str());
      }
    } else if (*ev) {
      const auto manifest = manifest_or(ev_manifest);
      const auto run = cmd_eval(ev_ckpt, manifest, ev_thr.value_or(cfg.threshold), cfg.train.kappa_mode,
                                out / ("eval_" + std::filesystem::path(ev_ckpt).stem().string()));
      const std::vector<std::string> names(kClassNames.begin(), kClassNames.end());
      std::printf("%s", format_report(run.report, names).c_str());
    } else if (*ex) {
      const auto manifest = manifest_or(ex_manifest);
      std::optional<std::size_t> cls;
      if (!ex_class.empty()) {
        cls = class_index(ex_class);
        if (!cls) throw ConfigError("unknown class '" + ex_class + "'");
      }
      CamLayer layer = cfg.cam_layer;
      if (!ex_layer.empty()) {
        try {
          layer = parse_cam_layer(ex_layer);
        } catch (const ArgumentError& e) {
          throw ConfigError(e.what());
        }
      }
      const auto run = cmd_explain(ex_ckpt, manifest, ex_ids, cls, layer, cfg.threshold, out / "explain", ex_motifs);
      std::printf("heatmaps=%zu files=%zu\n", run.maps, run.files.size());
      if (!ex_motifs.empty()) {
        std::printf("localized=%zu/%zu", run.localized, run.evaluated);
        if (run.evaluated > 0) std::printf(" (%.1f%%)", 100.0 * run.localized / run.evaluated);
        std::printf("\n");
      }
    } else if (*ver) {
      const auto rep = cmd_verify(cfg.seed);
      std::printf("%s", rep.text().c_str());
      if (!rep.passed()) return kExitVerify;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "argument error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitOk;
}
