#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "dkcnet/dataset.hpp"
#include "dkcnet/explain.hpp"
#include "dkcnet/model.hpp"

namespace dkcnet {

struct BalanceSettings {
  BalanceMode mode = BalanceMode::kNone;
  OversampleRule rule = OversampleRule::kTableConsistent;
  CbfTable cbf{};
};

/// Everything one run needs. Defaults follow the published training setup:
/// lr 0.0005, decay 1e-6, batch 16, 100 epochs, 80/20 split.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
  std::filesystem::path manifest;     // pair sheet for preprocess, eye sheet afterwards
  std::filesystem::path keyword_map;  // empty: built-in map
  BalanceSettings balance;
  ModelConfig model;
  TrainConfig train;
  double threshold = 0.5;
  CamLayer cam_layer = CamLayer::kSeOut;

  /// Cross-module checks (channel chain, ranges) plus existence of every
  /// non-empty input path. Throws ConfigError.
  void validate() const;
};

std::string run_config_to_json(const RunConfig& cfg);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
RunConfig run_config_from_json(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

const char* balance_mode_name(BalanceMode mode);
BalanceMode parse_balance_mode(std::string_view name);

/// The per-class factors used for the published oversampled and undersampled
/// datasets.
CbfTable published_oversample_cbf();
CbfTable published_undersample_cbf();

}  // namespace dkcnet
