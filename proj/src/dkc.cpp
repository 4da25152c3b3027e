#include "dkcnet/dkc.hpp"

#include "dkcnet/errors.hpp"
#include "dkcnet/init.hpp"

namespace dkcnet {

void DkcConfig::validate() const {
  if (channels == 0) throw ConfigError("dkc: channels must be positive");
  if (groups == 0 || channels % groups != 0) {
    throw ConfigError("dkc: channels " + std::to_string(channels) +
                      " not divisible by shuffle groups " + std::to_string(groups));
  }
  if (dilations.empty()) throw ConfigError("dkc: at least one branch dilation is required");
  for (auto d : dilations)
    if (d < 1) throw ConfigError("dkc: dilations must be >= 1");
  if (kernel_size < 1) throw ConfigError("dkc: kernel size must be >= 1");
  if (excitation == ExcitationLayout::kTwoLayer &&
      (reduction == 0 || channels % reduction != 0)) {
    throw ConfigError("dkc: channels " + std::to_string(channels) +
                      " not divisible by reduction " + std::to_string(reduction));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dkc: dropout must lie in [0, 1)");
}

DkcParams DkcParams::create(const DkcConfig& cfg, ParamStore& store, const std::string& prefix,
                            Rng& rng) {
  cfg.validate();
  const std::size_t c = cfg.channels;
  DkcParams p;
  for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
    const std::string b = prefix + ".branch" + std::to_string(i);
    DkcBranchParams br;
    br.kernel = store.add(b + ".conv.weight",
                          init::he_normal(Shape{c, c, cfg.kernel_size, cfg.kernel_size}, rng));
    br.gamma = store.add(b + ".bn.gamma", Tensor4(Shape{1, c, 1, 1}, 1.0));
    br.beta = store.add(b + ".bn.beta", Tensor4(Shape{1, c, 1, 1}, 0.0));
    br.bn = BatchNormBuffers::create(c);
    store.add_existing(b + ".bn.running_mean", br.bn.running_mean, false);
    store.add_existing(b + ".bn.running_var", br.bn.running_var, false);
    store.add_existing(b + ".bn.tracked", br.bn.tracked, false);
    p.branches.push_back(std::move(br));
  }
  if (cfg.excitation == ExcitationLayout::kTwoLayer) {
    const std::size_t h = cfg.hidden();
    p.fc1_weight = store.add(prefix + ".fc1.weight", init::fan_in_uniform(Shape{h, c, 1, 1}, rng));
    p.fc1_bias = store.add(prefix + ".fc1.bias", Tensor4(Shape{1, h, 1, 1}, 0.0));
    p.fc2_weight = store.add(prefix + ".fc2.weight", init::fan_in_uniform(Shape{c, h, 1, 1}, rng));
    p.fc2_bias = store.add(prefix + ".fc2.bias", Tensor4(Shape{1, c, 1, 1}, 0.0));
  } else {
    p.fc1_weight = store.add(prefix + ".fc.weight", init::fan_in_uniform(Shape{c, c, 1, 1}, rng));
    p.fc1_bias = store.add(prefix + ".fc.bias", Tensor4(Shape{1, c, 1, 1}, 0.0));
  }
  return p;
}

std::vector<std::size_t> channel_shuffle_permutation(std::size_t channels, std::size_t groups) {
  if (groups == 0 || channels % groups != 0) {
    throw ArgumentError("channel_shuffle: " + std::to_string(channels) +
                        " channels not divisible by " + std::to_string(groups) + " groups");
  }
  const std::size_t per = channels / groups;
  std::vector<std::size_t> perm(channels);
  for (std::size_t a = 0; a < groups; ++a)
    for (std::size_t b = 0; b < per; ++b) perm[b * groups + a] = a * per + b;
  return perm;
}

Var channel_shuffle(const Var& x, std::size_t groups) {
  const auto perm = channel_shuffle_permutation(x.shape().c, groups);
  return permute_channels(x, perm);
}

Var dkc_branch(const Var& p, const DkcConfig& cfg, DkcParams& params, std::size_t index,
               Mode mode) {
  if (p.shape().c != cfg.channels) {
    throw DimensionError("dkc_branch: input has " + std::to_string(p.shape().c) +
                         " channels, block expects " + std::to_string(cfg.channels));
  }
  auto& br = params.branches.at(index);
  ConvOptions opt;
  opt.dilation = cfg.dilations.at(index);
  opt.padding = Padding::kSame;
  Var conv = conv2d(p, br.kernel, std::nullopt, opt);
  return relu(batch_norm(conv, br.gamma, br.beta, br.bn, mode));
}

Var dkc_fuse(std::span<const Var> branches) {
  if (branches.empty()) throw ArgumentError("dkc_fuse: no branches");
  Var acc = branches[0];
  for (std::size_t i = 1; i < branches.size(); ++i) {
    require_same_shape(branches[i].shape(), branches[0].shape(), "dkc_fuse");
    acc = add(acc, branches[i]);
  }
  return acc;
}

Var dkc_squeeze(const Var& fused) { return add(global_max_pool(fused), global_avg_pool(fused)); }

Var dkc_excite(const Var& squeezed, const DkcConfig& cfg, const DkcParams& params, Rng& rng,
               Mode mode) {
  const Shape s = squeezed.shape();
  if (s.c != cfg.channels || s.h != 1 || s.w != 1) {
    throw DimensionError("dkc_excite: expected (n," + std::to_string(cfg.channels) +
                         ",1,1), got " + s.str());
  }
  if (cfg.excitation == ExcitationLayout::kSingleLayer) {
    Var dropped = dropout(squeezed, cfg.dropout, rng, mode);
    return sigmoid(fully_connected(dropped, params.fc1_weight, params.fc1_bias));
  }
  if (cfg.reduction == 0 || cfg.channels % cfg.reduction != 0) {
    throw ConfigError("dkc_excite: channels not divisible by reduction");
  }
  Var hidden = relu(fully_connected(squeezed, params.fc1_weight, params.fc1_bias));
  hidden = dropout(hidden, cfg.dropout, rng, mode);
  return sigmoid(fully_connected(hidden, params.fc2_weight, params.fc2_bias));
}

Var dkc_reweight(const Var& weights, std::span<const Var> branches) {
  if (branches.empty()) throw ArgumentError("dkc_reweight: no branches");
  Var acc;
  for (const auto& b : branches) {
    Var scaled = mul(b, weights);
    acc = acc.defined() ? add(acc, scaled) : scaled;
  }
  return acc;
}

DkcTrace dkc_forward_traced(const Var& x, const DkcConfig& cfg, DkcParams& params, Rng& rng,
                            Mode mode) {
  if (x.shape().c != cfg.channels) {
    throw DimensionError("dkc_forward: input has " + std::to_string(x.shape().c) +
                         " channels, block expects " + std::to_string(cfg.channels));
  }
  DkcTrace t;
  t.shuffled = channel_shuffle(x, cfg.groups);
  for (std::size_t i = 0; i < cfg.dilations.size(); ++i)
    t.branches.push_back(dkc_branch(t.shuffled, cfg, params, i, mode));
  t.fused = dkc_fuse(t.branches);
  t.squeezed = dkc_squeeze(t.fused);
  t.weights = dkc_excite(t.squeezed, cfg, params, rng, mode);
  t.output = dkc_reweight(t.weights, t.branches);
  return t;
}

Var dkc_forward(const Var& x, const DkcConfig& cfg, DkcParams& params, Rng& rng, Mode mode) {
  return dkc_forward_traced(x, cfg, params, rng, mode).output;
}

}  // namespace dkcnet
