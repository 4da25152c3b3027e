#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dkcnet/dkc.hpp"
#include "dkcnet/matrix.hpp"
#include "dkcnet/metrics.hpp"
#include "dkcnet/se.hpp"

namespace dkcnet {

struct BackboneStage {
  std::size_t out_channels = 16;
  std::size_t stride = 2;
};

/// Plain conv -> BN -> ReLU stack standing in for a pretrained feature extractor.
struct BackboneConfig {
  std::vector<BackboneStage> stages{{16, 2}, {32, 2}, {64, 2}, {64, 2}};
  std::size_t kernel_size = 3;

  void validate() const;
  std::size_t out_channels() const { return stages.back().out_channels; }
  /// Spatial extent of the final feature map for a square input of `input`.
  std::size_t output_extent(std::size_t input) const;
};

struct ModelConfig {
  BackboneConfig backbone;
  bool attention = true;  // false: backbone -> dropout -> GAP -> FC
  DkcConfig dkc;
  SeConfig se;
  double head_dropout = 0.3;
  std::size_t num_classes = 8;
  std::size_t input_size = 224;
  std::size_t input_channels = 3;

  void validate() const;
};

std::string model_config_to_json(const ModelConfig& cfg);
/// Missing keys keep their defaults. Throws ConfigError on malformed input.
ModelConfig model_config_from_json(std::string_view text);

/// Intermediate maps of one forward pass. attention_out and se_out stay
/// undefined when the attention path is disabled.
struct ModelTrace {
  Var backbone_out;
  Var attention_out;
  Var se_out;
  Var logits;  // (n, K, 1, 1), pre-sigmoid
  Var probs;   // (n, K, 1, 1)
};

class Model {
 public:
  explicit Model(ModelConfig cfg, std::uint64_t seed = 0);
  // Parameters are shared handles, so a copy would alias the original.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  ModelTrace forward_traced(const Var& images, Rng& rng, Mode mode);
  /// Per-class probabilities, shape (n, K, 1, 1).
  Var forward(const Var& images, Rng& rng, Mode mode);
  /// Eval-mode probabilities, one row per image, computed in chunks of `batch`.
  Matrix predict_proba(const Tensor4& images, std::size_t batch = 16);

  /// Config JSON goes into the checkpoint metadata.
  Checkpoint to_checkpoint() const;
  static Model from_checkpoint(const Checkpoint& ckpt);

 private:
  struct Stage {
    Var kernel;
    Var gamma;
    Var beta;
    BatchNormBuffers bn;
    std::size_t stride = 1;
  };

  ModelConfig cfg_;
  ParamStore store_;
  std::vector<Stage> stages_;
  DkcParams dkc_;
  SeParams se_;
  Var head_weight_;
  Var head_bias_;
};

inline constexpr double kBceEps = 1e-12;

/// Mean binary cross-entropy over every (instance, class) slot. `probs` has
/// shape (n, K, 1, 1) and `labels` is (n, K) with 0/1 entries. Probabilities
/// are clamped to [eps, 1 - eps]; the gradient is zero where the clamp is
/// active.
Var bce_loss(const Var& probs, const Matrix& labels, double eps = kBceEps);
double bce_value(const Matrix& labels, const Matrix& probs, double eps = kBceEps);

enum class DecayMode {
  kTimeBased,    // lr_t = lr / (1 + decay * t)
  kWeightDecay,  // constant lr, gradient += decay * p
};

struct SgdConfig {
  double lr = 0.0005;
  double decay = 1e-6;
  DecayMode decay_mode = DecayMode::kTimeBased;
  double momentum = 0.0;
};

double sgd_learning_rate(const SgdConfig& cfg, std::uint64_t step);

class Sgd {
 public:
  explicit Sgd(SgdConfig cfg) : cfg_(cfg) {}
  /// Updates every trainable entry of `store` in place from its gradient.
  /// Throws StateError when a trainable tensor has no gradient.
  void step(ParamStore& store);
  std::uint64_t steps() const { return step_; }
  const SgdConfig& config() const { return cfg_; }

 private:
  SgdConfig cfg_;
  std::uint64_t step_ = 0;
  std::map<std::string, Tensor4> velocity_;
};

/// Copies the listed batch entries into a new tensor.
Tensor4 gather_rows(const Tensor4& images, std::span<const std::size_t> index);

struct Dataset {
  Tensor4 images;  // (N, C, H, W)
  Matrix labels;   // (N, K)

  std::size_t size() const { return images.shape().n; }
  Tensor4 gather_images(std::span<const std::size_t> index) const;
  Matrix gather_labels(std::span<const std::size_t> index) const;
  Dataset subset(std::span<const std::size_t> index) const;
};

struct TrainConfig {
  SgdConfig sgd;
  std::size_t batch_size = 16;
  std::size_t epochs = 100;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  KappaMode kappa_mode = KappaMode::kFlatten;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_auc = 0.0;  // NaN when undefined
  double val_f1 = 0.0;
  double val_kappa = 0.0;
};

inline constexpr const char* kTrainLogHeader = "epoch,train_loss,val_auc,val_f1,val_kappa";
std::string format_epoch_log(const EpochLog& e);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded shuffle, then the first round(n * train_fraction) indices train.
Split train_val_split(std::size_t n, double train_fraction, std::uint64_t seed);
/// k disjoint validation folds covering 0..n-1 after a seeded shuffle.
std::vector<Split> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

struct TrainResult {
  std::vector<EpochLog> log;
  Split split;
  std::size_t best_epoch = 0;
  double best_val_auc = 0.0;
  std::map<std::string, Tensor4> best_params;  // snapshot of the selected epoch
};

/// Minibatch SGD on BCE. Every epoch reshuffles the training indices from the
/// seed; the best epoch is the one with the highest macro validation AUC
/// (earliest wins ties; the last epoch when validation AUC is never defined).
/// The model is left at its final-epoch parameters.
TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

struct Prediction {
  std::vector<double> probabilities;
  std::vector<int> decisions;  // probability > threshold
};

std::vector<Prediction> decide(const Matrix& probabilities, double threshold = 0.5);
std::vector<Prediction> predict(Model& model, const Tensor4& images, double threshold = 0.5);

/// Row-wise maximum over rows that share a group key (for example both eyes
/// of one patient). Groups appear in first-seen order.
Matrix merge_by_group_max(const Matrix& probabilities, std::span<const std::string> groups,
                          std::vector<std::string>* group_order = nullptr);

}  // namespace dkcnet
