#include "dkcnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "dkcnet/init.hpp"
#include "json.hpp"

namespace dkcnet {

using nlohmann::json;

void BackboneConfig::validate() const {
  if (stages.empty()) throw ConfigError("backbone needs at least one stage");
  if (kernel_size == 0) throw ConfigError("backbone kernel size must be positive");
  for (const auto& s : stages) {
    if (s.out_channels == 0) throw ConfigError("backbone stage with zero channels");
    if (s.stride == 0) throw ConfigError("backbone stage with zero stride");
  }
}

std::size_t BackboneConfig::output_extent(std::size_t input) const {
  std::size_t e = input;
  for (const auto& s : stages) e = (e + s.stride - 1) / s.stride;
  return e;
}

void ModelConfig::validate() const {
  backbone.validate();
  if (num_classes == 0) throw ConfigError("num_classes must be positive");
  if (input_size == 0 || input_channels == 0) throw ConfigError("input size must be positive");
  if (!(head_dropout >= 0.0 && head_dropout < 1.0)) {
    throw ConfigError("head dropout must lie in [0, 1)");
  }
  if (backbone.output_extent(input_size) < 1) throw ConfigError("backbone collapses the input");
  if (attention) {
    dkc.validate();
    se.validate();
    if (dkc.channels != backbone.out_channels()) {
      throw ConfigError("attention block expects " + std::to_string(dkc.channels) +
                        " channels but the backbone emits " +
                        std::to_string(backbone.out_channels()));
    }
    if (se.channels != dkc.channels) {
      throw ConfigError("SE block expects " + std::to_string(se.channels) +
                        " channels but the attention block emits " + std::to_string(dkc.channels));
    }
  }
}

namespace {

json to_json_value(const ModelConfig& c) {
  json stages = json::array();
  for (const auto& s : c.backbone.stages)
    stages.push_back({{"out_channels", s.out_channels}, {"stride", s.stride}});
  return {
      {"backbone", {{"stages", stages}, {"kernel_size", c.backbone.kernel_size}}},
      {"attention", c.attention},
      {"dkc",
       {{"channels", c.dkc.channels},
        {"groups", c.dkc.groups},
        {"dilations", c.dkc.dilations},
        {"kernel_size", c.dkc.kernel_size},
        {"reduction", c.dkc.reduction},
        {"dropout", c.dkc.dropout},
        {"excitation",
         c.dkc.excitation == ExcitationLayout::kTwoLayer ? "two_layer" : "single_layer"}}},
      {"se", {{"channels", c.se.channels}, {"reduction", c.se.reduction}}},
      {"head_dropout", c.head_dropout},
      {"num_classes", c.num_classes},
      {"input_size", c.input_size},
      {"input_channels", c.input_channels},
  };
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }) ==
        allowed.end()) {
      throw ConfigError(std::string("unknown key '") + k + "' in " + where);
    }
  }
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return to_json_value(cfg).dump(2); }

ModelConfig model_config_from_json(std::string_view text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    check_keys(j,
               {"backbone", "attention", "dkc", "se", "head_dropout", "num_classes",
                "input_size", "input_channels"},
               "model");
    if (j.contains("backbone")) {
      const json& b = j.at("backbone");
      check_keys(b, {"stages", "kernel_size"}, "model.backbone");
      read(b, "kernel_size", c.backbone.kernel_size);
      if (b.contains("stages")) {
        c.backbone.stages.clear();
        for (const auto& s : b.at("stages")) {
          check_keys(s, {"out_channels", "stride"}, "model.backbone.stages[]");
          BackboneStage st;
          read(s, "out_channels", st.out_channels);
          read(s, "stride", st.stride);
          c.backbone.stages.push_back(st);
        }
      }
    }
    read(j, "attention", c.attention);
    if (j.contains("dkc")) {
      const json& d = j.at("dkc");
      check_keys(d, {"channels", "groups", "dilations", "kernel_size", "reduction", "dropout",
                     "excitation"},
                 "model.dkc");
      read(d, "channels", c.dkc.channels);
      read(d, "groups", c.dkc.groups);
      read(d, "dilations", c.dkc.dilations);
      read(d, "kernel_size", c.dkc.kernel_size);
      read(d, "reduction", c.dkc.reduction);
      read(d, "dropout", c.dkc.dropout);
      if (d.contains("excitation")) {
        const auto e = d.at("excitation").get<std::string>();
        if (e == "two_layer") c.dkc.excitation = ExcitationLayout::kTwoLayer;
        else if (e == "single_layer") c.dkc.excitation = ExcitationLayout::kSingleLayer;
        else throw ConfigError("unknown excitation layout '" + e + "'");
      }
    }
    if (j.contains("se")) {
      check_keys(j.at("se"), {"channels", "reduction"}, "model.se");
      read(j.at("se"), "channels", c.se.channels);
      read(j.at("se"), "reduction", c.se.reduction);
    }
    read(j, "head_dropout", c.head_dropout);
    read(j, "num_classes", c.num_classes);
    read(j, "input_size", c.input_size);
    read(j, "input_channels", c.input_channels);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  std::size_t in = cfg_.input_channels;
  const std::size_t k = cfg_.backbone.kernel_size;
  for (std::size_t i = 0; i < cfg_.backbone.stages.size(); ++i) {
    const auto& s = cfg_.backbone.stages[i];
    const std::string p = "backbone.stage" + std::to_string(i);
    Stage st;
    st.stride = s.stride;
    st.kernel = store_.add(p + ".conv.weight", init::he_normal(Shape{s.out_channels, in, k, k}, rng));
    st.gamma = store_.add(p + ".bn.gamma", Tensor4(Shape{1, s.out_channels, 1, 1}, 1.0));
    st.beta = store_.add(p + ".bn.beta", Tensor4(Shape{1, s.out_channels, 1, 1}, 0.0));
    st.bn = BatchNormBuffers::create(s.out_channels);
    store_.add_existing(p + ".bn.running_mean", st.bn.running_mean, false);
    store_.add_existing(p + ".bn.running_var", st.bn.running_var, false);
    store_.add_existing(p + ".bn.tracked", st.bn.tracked, false);
    stages_.push_back(std::move(st));
    in = s.out_channels;
  }
  if (cfg_.attention) {
    dkc_ = DkcParams::create(cfg_.dkc, store_, "dkc", rng);
    se_ = SeParams::create(cfg_.se, store_, "se", rng);
  }
  head_weight_ = store_.add("head.weight",
                           init::fan_in_uniform(Shape{cfg_.num_classes, in, 1, 1}, rng));
  head_bias_ = store_.add("head.bias", Tensor4(Shape{1, cfg_.num_classes, 1, 1}, 0.0));
}

ModelTrace Model::forward_traced(const Var& images, Rng& rng, Mode mode) {
  const Shape s = images.shape();
  if (s.c != cfg_.input_channels || s.h != cfg_.input_size || s.w != cfg_.input_size) {
    throw DimensionError("model expects (n, " + std::to_string(cfg_.input_channels) + ", " +
                         std::to_string(cfg_.input_size) + ", " + std::to_string(cfg_.input_size) +
                         ") input, got " + s.str());
  }
  ModelTrace t;
  Var h = images;
  for (auto& st : stages_) {
    h = conv2d(h, st.kernel, std::nullopt, ConvOptions{1, st.stride, Padding::kSame});
    h = relu(batch_norm(h, st.gamma, st.beta, st.bn, mode));
  }
  t.backbone_out = h;
  if (cfg_.attention) {
    t.attention_out = dkc_forward(h, cfg_.dkc, dkc_, rng, mode);
    h = dropout(t.attention_out, cfg_.head_dropout, rng, mode);
    t.se_out = se_forward(h, se_);
    h = t.se_out;
  } else {
    h = dropout(h, cfg_.head_dropout, rng, mode);
  }
  t.logits = fully_connected(global_avg_pool(h), head_weight_, head_bias_);
  t.probs = sigmoid(t.logits);
  return t;
}

Var Model::forward(const Var& images, Rng& rng, Mode mode) {
  return forward_traced(images, rng, mode).probs;
}

Matrix Model::predict_proba(const Tensor4& images, std::size_t batch) {
  if (batch == 0) throw ArgumentError("predict batch size must be positive");
  const std::size_t n = images.shape().n;
  Matrix out(n, cfg_.num_classes);
  Rng unused(0);
  for (std::size_t start = 0; start < n; start += batch) {
    std::vector<std::size_t> idx(std::min(batch, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const Var p = forward(Var(gather_rows(images, idx)), unused, Mode::kEval);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < cfg_.num_classes; ++c) out(start + i, c) = p.value().at(i, c, 0, 0);
  }
  return out;
}

Checkpoint Model::to_checkpoint() const {
  return Checkpoint::from_store(store_, model_config_to_json(cfg_));
}

Model Model::from_checkpoint(const Checkpoint& ckpt) {
  Model m(model_config_from_json(ckpt.metadata));
  ckpt.apply_to(m.store_);
  return m;
}

Var bce_loss(const Var& probs, const Matrix& labels, double eps) {
  const Shape s = probs.shape();
  if (s.h != 1 || s.w != 1 || s.n != labels.rows || s.c != labels.cols) {
    throw DimensionError("bce_loss: probabilities " + s.str() + " do not match labels (" +
                         std::to_string(labels.rows) + ", " + std::to_string(labels.cols) + ")");
  }
  for (double v : labels.data)
    if (v != 0.0 && v != 1.0) throw ArgumentError("bce_loss: labels must be 0/1");
  const std::size_t m = labels.data.size();
  if (m == 0) throw ArgumentError("bce_loss: empty batch");
  const auto p = probs.value().data();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double q = std::clamp(p[i], eps, 1.0 - eps);
    total += labels.data[i] == 1.0 ? std::log(q) : std::log1p(-q);
  }
  Tensor4 out(Shape{1, 1, 1, 1}, -total / static_cast<double>(m));
  return Var::from_op(std::move(out), {probs}, [labels, eps, m](detail::Node& self) {
    Tensor4* gp = parent_grad(self, 0);
    if (!gp) return;
    const auto p = parent_value(self, 0).data();
    const double g = self.grad[0] / static_cast<double>(m);
    auto dst = gp->data();
    for (std::size_t i = 0; i < m; ++i) {
      if (p[i] < eps || p[i] > 1.0 - eps) continue;
      dst[i] += labels.data[i] == 1.0 ? -g / p[i] : g / (1.0 - p[i]);
    }
  });
}

double bce_value(const Matrix& labels, const Matrix& probs, double eps) {
  if (!labels.same_shape(probs)) throw DimensionError("bce_value: shape mismatch");
  Var p(Tensor4(Shape{probs.rows, probs.cols, 1, 1}, probs.data));
  return bce_loss(p, labels, eps).value().item();
}

double sgd_learning_rate(const SgdConfig& cfg, std::uint64_t step) {
  if (cfg.decay_mode == DecayMode::kWeightDecay) return cfg.lr;
  return cfg.lr / (1.0 + cfg.decay * static_cast<double>(step));
}

void Sgd::step(ParamStore& store) {
  const double lr = sgd_learning_rate(cfg_, step_);
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    if (!e.var.has_grad()) throw StateError("sgd: no gradient for " + e.name);
  }
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    Var v = e.var;
    auto value = v.mutable_value().data();
    const auto g = e.var.grad().data();
    Tensor4* vel = nullptr;
    if (cfg_.momentum != 0.0) {
      auto it = velocity_.try_emplace(e.name, e.var.shape()).first;
      vel = &it->second;
    }
    for (std::size_t i = 0; i < value.size(); ++i) {
      double d = g[i];
      if (cfg_.decay_mode == DecayMode::kWeightDecay) d += cfg_.decay * value[i];
      if (vel) {
        double& u = (*vel)[i];
        u = cfg_.momentum * u + d;
        d = u;
      }
      value[i] -= lr * d;
    }
  }
  ++step_;
}

Tensor4 Dataset::gather_images(std::span<const std::size_t> index) const {
  return gather_rows(images, index);
}

Tensor4 gather_rows(const Tensor4& images, std::span<const std::size_t> index) {
  const Shape s = images.shape();
  Tensor4 out(Shape{index.size(), s.c, s.h, s.w});
  const std::size_t per = s.c * s.plane();
  const auto src = images.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= s.n) throw ArgumentError("dataset index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(index[i] * per), per,
                dst.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

Matrix Dataset::gather_labels(std::span<const std::size_t> index) const {
  Matrix out(index.size(), labels.cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= labels.rows) throw ArgumentError("dataset index out of range");
    for (std::size_t c = 0; c < labels.cols; ++c) out(i, c) = labels(index[i], c);
  }
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> index) const {
  return {gather_images(index), gather_labels(index)};
}

void TrainConfig::validate() const {
  if (!(sgd.lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(sgd.decay >= 0.0)) throw ConfigError("decay must be non-negative");
  if (!(sgd.momentum >= 0.0 && sgd.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1)");
  }
}

std::string format_epoch_log(const EpochLog& e) {
  std::ostringstream os;
  os << std::setprecision(17) << e.epoch << "," << e.train_loss << "," << e.val_auc << ","
     << e.val_f1 << "," << e.val_kappa;
  return os.str();
}

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

Split train_val_split(std::size_t n, double train_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = Rng(seed).fork(Rng::hash("split"));
  shuffle(idx, rng);
  auto cut = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
  cut = std::clamp<std::size_t>(cut, n > 0 ? 1 : 0, n);
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end());
  return s;
}

std::vector<Split> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2 || k > n) throw ArgumentError("kfold_split: need 2 <= k <= n");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = Rng(seed).fork(Rng::hash("kfold"));
  shuffle(idx, rng);
  std::vector<Split> folds(k);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t f = i % k;
    for (std::size_t j = 0; j < k; ++j) (j == f ? folds[j].val : folds[j].train).push_back(idx[i]);
  }
  return folds;
}

TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (data.size() == 0) throw ArgumentError("train: empty dataset");
  if (data.labels.rows != data.size() || data.labels.cols != model.config().num_classes) {
    throw DimensionError("train: labels do not match images or class count");
  }
  TrainResult result;
  result.split = train_val_split(data.size(), cfg.train_fraction, cfg.seed);
  const Dataset val = data.subset(result.split.val);
  Sgd opt(cfg.sgd);
  ParamStore& store = model.params();
  Rng base(cfg.seed);
  double best = -std::numeric_limits<double>::infinity();
  bool have_best = false;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = result.split.train;
    Rng order_rng = base.fork(Rng::mix(Rng::hash("epoch"), epoch));
    shuffle(order, order_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      Rng step_rng = base.fork(Rng::mix(Rng::hash("step"), opt.steps()));
      Var images(data.gather_images(idx));
      const Matrix labels = data.gather_labels(idx);
      store.zero_grads();
      Var loss = bce_loss(model.forward(images, step_rng, Mode::kTrain), labels);
      backward(loss);
      opt.step(store);
      loss_sum += loss.value().item() * static_cast<double>(idx.size());
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(order.size());
    log.val_auc = std::numeric_limits<double>::quiet_NaN();
    log.val_f1 = std::numeric_limits<double>::quiet_NaN();
    log.val_kappa = std::numeric_limits<double>::quiet_NaN();
    if (val.size() > 0) {
      const Matrix probs = model.predict_proba(val.images, cfg.batch_size);
      const MetricsReport rep = evaluate(val.labels, probs, cfg.threshold, cfg.kappa_mode);
      log.val_auc = rep.macro_auc;
      log.val_f1 = rep.macro_f1;
      log.val_kappa = rep.kappa.value;
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);

    const bool defined = !std::isnan(log.val_auc);
    if ((defined && log.val_auc > best) || (!defined && !have_best && epoch == cfg.epochs)) {
      best = defined ? log.val_auc : best;
      have_best = defined;
      result.best_epoch = epoch;
      result.best_val_auc = log.val_auc;
      result.best_params = store.snapshot();
    }
  }
  return result;
}

std::vector<Prediction> decide(const Matrix& probabilities, double threshold) {
  std::vector<Prediction> out(probabilities.rows);
  for (std::size_t r = 0; r < probabilities.rows; ++r) {
    const auto row = probabilities.row(r);
    out[r].probabilities.assign(row.begin(), row.end());
    for (double p : row) out[r].decisions.push_back(p > threshold ? 1 : 0);
  }
  return out;
}

std::vector<Prediction> predict(Model& model, const Tensor4& images, double threshold) {
  return decide(model.predict_proba(images), threshold);
}

Matrix merge_by_group_max(const Matrix& probabilities, std::span<const std::string> groups,
                          std::vector<std::string>* group_order) {
  if (groups.size() != probabilities.rows) throw DimensionError("merge: one group key per row");
  std::vector<std::string> order;
  std::map<std::string, std::size_t> slot;
  for (const auto& g : groups)
    if (slot.emplace(g, order.size()).second) order.push_back(g);
  Matrix out(order.size(), probabilities.cols, -std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < probabilities.rows; ++r) {
    const std::size_t o = slot.at(groups[r]);
    for (std::size_t c = 0; c < probabilities.cols; ++c)
      out(o, c) = std::max(out(o, c), probabilities(r, c));
  }
  if (group_order) *group_order = std::move(order);
  return out;
}

}  // namespace dkcnet
