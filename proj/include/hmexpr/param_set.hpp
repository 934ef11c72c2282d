#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "hmexpr/tensor.hpp"

namespace hmexpr {

/// Named parameter tensors kept in insertion order. The order is the
/// checkpoint manifest order.
class ParamSet {
 public:
  void add(std::string name, Tensor value);

  bool contains(std::string_view name) const { return find(name) != nullptr; }
  const Tensor* find(std::string_view name) const;
  Tensor* find(std::string_view name);
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  std::size_t size() const noexcept { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const Tensor& tensor(std::size_t i) const { return tensors_.at(i); }
  Tensor& tensor(std::size_t i) { return tensors_.at(i); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  /// Sum of entries over all tensors.
  std::size_t total_entries() const;

  /// Union of two sets with disjoint names.
  ParamSet merged(const ParamSet& other) const;
  /// Subset whose names start with `prefix`.
  ParamSet with_prefix(std::string_view prefix) const;

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

}  // namespace hmexpr
