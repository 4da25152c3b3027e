#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dkcnet/config.hpp"
#include "dkcnet/explain.hpp"
#include "dkcnet/metrics.hpp"

namespace dkcnet {

struct PreprocessReport {
  std::size_t pairs = 0;
  std::size_t kept = 0;
  std::size_t removed = 0;
  std::size_t unmapped = 0;
  std::size_t missing = 0;
  std::array<std::size_t, kNumClasses> histogram{};
  std::filesystem::path manifest;  // eye sheet of the kept records

  std::string text() const;
};

/// Splits every pair into eyes, drops artifact eyes, crops and resizes the
/// kept images into out_dir/images and writes out_dir/eyes.csv, removed.csv,
/// unmapped.csv and preprocess_report.txt.
PreprocessReport cmd_preprocess(const std::filesystem::path& pair_manifest, const KeywordMap& map,
                                const std::filesystem::path& out_dir, std::size_t size);

struct BalanceReport {
  BalancePlan plan;
  ClassCountsArray before{};
  ClassCountsArray after{};
  std::filesystem::path manifest;

  std::string text() const;
};

/// Balances an eye sheet and writes the result to `out_path` with image paths
/// rewritten relative to it. Mode none keeps every record once.
BalanceReport cmd_balance(const std::filesystem::path& eye_manifest, const BalanceSettings& settings,
                          std::uint64_t seed, const std::filesystem::path& out_path);

struct LoadedData {
  Dataset data;
  std::vector<EyeRecord> records;
};

/// Materializes every record of an eye sheet at size x size.
LoadedData load_eye_dataset(const std::filesystem::path& eye_manifest, std::size_t size);

struct TrainRun {
  TrainResult result;
  std::filesystem::path checkpoint;  // parameters of the selected epoch
  std::filesystem::path log;         // one CSV row per epoch
};

/// Trains cfg.model on the eye sheet and writes <tag>.ckpt and <tag>_log.csv
/// under out_dir.
TrainRun cmd_train(const RunConfig& cfg, const std::filesystem::path& eye_manifest,
                   const std::filesystem::path& out_dir, const std::string& tag,
                   const std::function<void(const EpochLog&)>& on_epoch = {});

struct EvalRun {
  MetricsReport report;
  Matrix probabilities;
  std::vector<EyeRecord> records;
};

/// Scores an eye sheet with a checkpoint; writes metrics.txt, predictions.csv
/// and one roc_<class>.csv per class with a defined curve under out_dir.
EvalRun cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& eye_manifest,
                 double threshold, KappaMode kappa_mode, const std::filesystem::path& out_dir);

struct ExplainRun {
  std::vector<std::filesystem::path> files;
  std::size_t maps = 0;
  /// With motif boxes: maps of correctly detected classes, and how many of
  /// them peak inside a box of that class.
  std::size_t evaluated = 0;
  std::size_t localized = 0;
};

/// Grad-CAM for the records whose key is in `keys` (all records when empty),
/// for `cls` or else every positive label of each record. Writes the map and
/// overlay for `layer` plus a backbone-vs-layer comparison strip.
ExplainRun cmd_explain(const std::filesystem::path& checkpoint,
                       const std::filesystem::path& eye_manifest,
                       const std::vector<std::string>& keys, std::optional<std::size_t> cls,
                       CamLayer layer, double threshold, const std::filesystem::path& out_dir,
                       const std::filesystem::path& motifs = {});

struct VerifyCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;
  bool passed() const;
  std::string text() const;
};

/// Gradient, shape, oracle and arithmetic self-checks on tiny inputs.
VerifyReport cmd_verify(std::uint64_t seed = 0);

}  // namespace dkcnet
