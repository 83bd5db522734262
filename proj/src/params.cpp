#include "cva/params.hpp"

#include <cmath>
#include <stdexcept>

namespace cva {

ParamId ParameterStore::add(std::string name, Tensor init) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  ParamEntry e;
  e.name = std::move(name);
  e.grad = Tensor::zeros_like(init);
  e.m = Tensor::zeros_like(init);
  e.v = Tensor::zeros_like(init);
  e.value = std::move(init);
  entries_.push_back(std::move(e));
  return entries_.size() - 1;
}

std::optional<ParamId> ParameterStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  return std::nullopt;
}

ParamId ParameterStore::at(const std::string& name) const {
  if (auto id = find(name)) return *id;
  throw std::out_of_range("no parameter named '" + name + "'");
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

Tensor init_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

ad::Var Bound::operator()(ParamId id) {
  auto& slot = vars_.at(id);
  if (!slot) slot = tape_->parameter((*store_)[id].value);
  return *slot;
}

void Bound::accumulate(std::vector<Tensor>& grads, double weight) const {
  if (grads.size() != vars_.size()) throw std::invalid_argument("gradient buffer count does not match store");
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (!vars_[i]) continue;
    const auto src = tape_->grad(*vars_[i]).data();
    auto dst = grads[i].data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += weight * src[j];
  }
}

}  // namespace cva
