#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cva/rng.hpp"
#include "cva/tape.hpp"
#include "cva/tensor.hpp"

namespace cva {

using ParamId = std::size_t;

/// A trainable tensor with its gradient and Adam moment buffers.
struct ParamEntry {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;
  Tensor v;
};

/// Named, shaped weights for every model equation. Names are unique; moment
/// and gradient buffers always match the value shape.
class ParameterStore {
 public:
  ParamId add(std::string name, Tensor init);

  std::size_t size() const { return entries_.size(); }
  ParamEntry& operator[](ParamId id) { return entries_.at(id); }
  const ParamEntry& operator[](ParamId id) const { return entries_.at(id); }
  std::optional<ParamId> find(const std::string& name) const;
  ParamId at(const std::string& name) const;

  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

  void zero_grad();
  std::size_t parameter_count() const;

  std::uint64_t step = 0;

 private:
  std::vector<ParamEntry> entries_;
};

/// Fan-scaled uniform initialisation in +-sqrt(6 / (fan_in + fan_out)).
Tensor init_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Lazily binds store entries as parameter leaves on one tape.
class Bound {
 public:
  Bound(ad::Tape& tape, const ParameterStore& store) : tape_(&tape), store_(&store), vars_(store.size()) {}

  ad::Var operator()(ParamId id);
  ad::Tape& tape() const { return *tape_; }
  const ParameterStore& store() const { return *store_; }

  /// Adds this tape's parameter gradients into `grads` (indexed by ParamId).
  void accumulate(std::vector<Tensor>& grads, double weight = 1.0) const;

 private:
  ad::Tape* tape_;
  const ParameterStore* store_;
  std::vector<std::optional<ad::Var>> vars_;
};

}  // namespace cva
