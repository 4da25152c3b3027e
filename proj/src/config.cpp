#include "dkcnet/config.hpp"

#include <fstream>
#include <sstream>

#include "dkcnet/errors.hpp"
#include "json.hpp"

namespace dkcnet {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

const char* decay_mode_name(DecayMode m) { return m == DecayMode::kTimeBased ? "time" : "weight"; }
const char* kappa_mode_name(KappaMode m) { return m == KappaMode::kFlatten ? "flatten" : "per_class_mean"; }

}  // namespace

const char* balance_mode_name(BalanceMode mode) {
  switch (mode) {
    case BalanceMode::kNone: return "none";
    case BalanceMode::kOversample: return "over";
    case BalanceMode::kUndersample: return "under";
  }
  return "none";
}

BalanceMode parse_balance_mode(std::string_view name) {
  if (name == "none") return BalanceMode::kNone;
  if (name == "over") return BalanceMode::kOversample;
  if (name == "under") return BalanceMode::kUndersample;
  throw ConfigError("balance mode must be none, over or under, got '" + std::string(name) + "'");
}

CbfTable published_oversample_cbf() { return {0, 0, 5, 5, 7, 12, 6, 0}; }
CbfTable published_undersample_cbf() { return {12, 11, 2, 2, 2, 1, 2, 10}; }

void RunConfig::validate() const {
  model.validate();
  try {
    train.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  if (model.num_classes != kNumClasses) {
    throw ConfigError("model.num_classes must be " + std::to_string(kNumClasses) +
                      " to match the label columns");
  }
  if (!model.attention && cam_layer != CamLayer::kBackboneOut) {
    throw ConfigError(std::string("explain layer ") + cam_layer_name(cam_layer) +
                      " needs the attention path");
  }
  if (balance.mode == BalanceMode::kUndersample) {
    for (std::size_t c = 0; c < kNumClasses; ++c)
      if (balance.cbf[c] == 0) throw ConfigError(std::string("undersampling needs cbf >= 1 for class ") + kClassNames[c]);
  }
  if (balance.mode == BalanceMode::kOversample) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const std::size_t mult = balance.rule == OversampleRule::kLiteral ? balance.cbf[c] + 1 : balance.cbf[c];
      if (balance.cbf[c] > 0 && mult > kMaxAugmentations + 1) {
        throw ConfigError(std::string("cbf for class ") + kClassNames[c] + " needs more than " +
                          std::to_string(kMaxAugmentations) + " augmentations per image");
      }
    }
  }
  for (const auto* p : {&manifest, &keyword_map}) {
    if (!p->empty() && !std::filesystem::exists(*p)) throw ConfigError("path does not exist: " + p->string());
  }
}

std::string run_config_to_json(const RunConfig& c) {
  json cbf = json::object();
  for (std::size_t i = 0; i < kNumClasses; ++i) cbf[kClassNames[i]] = c.balance.cbf[i];
  const json j = {
      {"seed", c.seed},
      {"out_dir", c.out_dir.string()},
      {"manifest", c.manifest.string()},
      {"keyword_map", c.keyword_map.string()},
      {"balance",
       {{"mode", balance_mode_name(c.balance.mode)},
        {"rule", c.balance.rule == OversampleRule::kLiteral ? "literal" : "table"},
        {"cbf", cbf}}},
      {"model", json::parse(model_config_to_json(c.model))},
      {"train",
       {{"lr", c.train.sgd.lr},
        {"decay", c.train.sgd.decay},
        {"decay_mode", decay_mode_name(c.train.sgd.decay_mode)},
        {"momentum", c.train.sgd.momentum},
        {"batch_size", c.train.batch_size},
        {"epochs", c.train.epochs},
        {"train_fraction", c.train.train_fraction},
        {"kappa", kappa_mode_name(c.train.kappa_mode)}}},
      {"threshold", c.threshold},
      {"cam_layer", cam_layer_name(c.cam_layer)},
  };
  return j.dump(2);
}

RunConfig run_config_from_json(std::string_view text) {
  RunConfig c;
  try {
    const json j = json::parse(text);
    check_keys(j,
               {"seed", "out_dir", "manifest", "keyword_map", "balance", "model", "train",
                "threshold", "cam_layer"},
               "config");
    read(j, "seed", c.seed);
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("manifest")) c.manifest = j.at("manifest").get<std::string>();
    if (j.contains("keyword_map")) c.keyword_map = j.at("keyword_map").get<std::string>();
    if (j.contains("balance")) {
      const json& b = j.at("balance");
      check_keys(b, {"mode", "rule", "cbf"}, "balance");
      if (b.contains("mode")) c.balance.mode = parse_balance_mode(b.at("mode").get<std::string>());
      if (b.contains("rule")) {
        const auto r = b.at("rule").get<std::string>();
        if (r == "table") c.balance.rule = OversampleRule::kTableConsistent;
        else if (r == "literal") c.balance.rule = OversampleRule::kLiteral;
        else throw ConfigError("balance.rule must be table or literal");
      }
      if (b.contains("cbf")) {
        const json& t = b.at("cbf");
        if (!t.is_object()) throw ConfigError("balance.cbf must map class names to factors");
        for (const auto& [k, v] : t.items()) {
          const auto idx = class_index(k);
          if (!idx) throw ConfigError("unknown class '" + k + "' in balance.cbf");
          const auto f = v.get<long long>();
          if (f < 0) throw ConfigError("balance.cbf entries must be non-negative");
          c.balance.cbf[*idx] = static_cast<std::size_t>(f);
        }
      }
    }
    if (j.contains("model")) c.model = model_config_from_json(j.at("model").dump());
    if (j.contains("train")) {
      const json& t = j.at("train");
      check_keys(t, {"lr", "decay", "decay_mode", "momentum", "batch_size", "epochs", "train_fraction", "kappa"},
                 "train");
      read(t, "lr", c.train.sgd.lr);
      read(t, "decay", c.train.sgd.decay);
      read(t, "momentum", c.train.sgd.momentum);
      read(t, "batch_size", c.train.batch_size);
      read(t, "epochs", c.train.epochs);
      read(t, "train_fraction", c.train.train_fraction);
      if (t.contains("decay_mode")) {
        const auto m = t.at("decay_mode").get<std::string>();
        if (m == "time") c.train.sgd.decay_mode = DecayMode::kTimeBased;
        else if (m == "weight") c.train.sgd.decay_mode = DecayMode::kWeightDecay;
        else throw ConfigError("train.decay_mode must be time or weight");
      }
      if (t.contains("kappa")) {
        const auto m = t.at("kappa").get<std::string>();
        if (m == "flatten") c.train.kappa_mode = KappaMode::kFlatten;
        else if (m == "per_class_mean") c.train.kappa_mode = KappaMode::kPerClassMean;
        else throw ConfigError("train.kappa must be flatten or per_class_mean");
      }
    }
    read(j, "threshold", c.threshold);
    if (j.contains("cam_layer")) {
      try {
        c.cam_layer = parse_cam_layer(j.at("cam_layer").get<std::string>());
      } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  c.train.seed = c.seed;
  c.train.threshold = c.threshold;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return run_config_from_json(ss.str());
}

}  // namespace dkcnet
