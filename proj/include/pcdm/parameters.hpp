#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pcdm/autograd.hpp"

namespace pcdm {

/// Named, insertion-ordered collection of trainable leaves.
class ParameterStore {
 public:
  Var& add(const std::string& name, Tensor init);

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }
  Var& get(std::string_view name);
  const Var& get(std::string_view name) const;

  size_t size() const { return vars_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Var>& vars() { return vars_; }
  const std::vector<Var>& vars() const { return vars_; }

  void zero_grad();
  int64_t total_elements() const;

 private:
  std::vector<std::string> names_;
  std::vector<Var> vars_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace pcdm
