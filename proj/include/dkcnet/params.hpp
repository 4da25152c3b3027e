#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dkcnet/autograd.hpp"

namespace dkcnet {

/// Named model state: trainable tensors plus non-trainable buffers (batch-norm
/// running statistics). Insertion order is preserved for iteration.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var var;
    bool trainable = true;
  };

  /// Registers a new leaf. Throws ArgumentError on duplicate names.
  Var add(const std::string& name, Tensor4 value, bool trainable = true);
  /// Registers an existing leaf (used for buffers created elsewhere).
  void add_existing(const std::string& name, const Var& var, bool trainable);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Var& get(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Var> trainable() const;
  std::size_t parameter_count() const;

  void zero_grads();

  /// Deep copy of every value.
  std::map<std::string, Tensor4> snapshot() const;
  /// Overwrites values in place; names and shapes must match exactly.
  void restore(const std::map<std::string, Tensor4>& values);

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Binary checkpoint, little-endian:
///   magic "DKCNETCK" (8 bytes), u32 version (=1),
///   u32 metadata length + metadata bytes (UTF-8, free-form, JSON by convention),
///   u32 entry count, then per entry:
///     u32 name length + name bytes, u8 trainable flag,
///     4 x u64 extents (n, c, h, w), n*c*h*w IEEE-754 binary64 values.
/// Doubles are stored bit-for-bit so save/load round-trips exactly.
struct Checkpoint {
  std::string metadata;
  struct Tensor {
    std::string name;
    bool trainable = true;
    Tensor4 value;
  };
  std::vector<Tensor> tensors;

  static Checkpoint from_store(const ParamStore& store, std::string metadata);
  void apply_to(ParamStore& store) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dkcnet
