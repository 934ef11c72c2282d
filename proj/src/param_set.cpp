#include "hmexpr/param_set.hpp"

#include <algorithm>
#include <utility>

#include "hmexpr/errors.hpp"

namespace hmexpr {

void ParamSet::add(std::string name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

const Tensor* ParamSet::find(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  return it == names_.end() ? nullptr : &tensors_[static_cast<std::size_t>(it - names_.begin())];
}

Tensor* ParamSet::find(std::string_view name) {
  return const_cast<Tensor*>(std::as_const(*this).find(name));
}

const Tensor& ParamSet::at(std::string_view name) const {
  if (const Tensor* t = find(name)) return *t;
  throw ConfigError("unknown parameter: " + std::string(name));
}

Tensor& ParamSet::at(std::string_view name) { return const_cast<Tensor&>(std::as_const(*this).at(name)); }

std::size_t ParamSet::total_entries() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

ParamSet ParamSet::merged(const ParamSet& other) const {
  ParamSet out = *this;
  for (std::size_t i = 0; i < other.size(); ++i) out.add(other.name(i), other.tensor(i));
  return out;
}

ParamSet ParamSet::with_prefix(std::string_view prefix) const {
  ParamSet out;
  for (std::size_t i = 0; i < size(); ++i)
    if (names_[i].starts_with(prefix)) out.add(names_[i], tensors_[i]);
  return out;
}

}  // namespace hmexpr
