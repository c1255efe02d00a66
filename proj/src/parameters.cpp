#include "pcdm/parameters.hpp"

#include "pcdm/errors.hpp"

namespace pcdm {

Var& ParameterStore::add(const std::string& name, Tensor init) {
  if (contains(name)) throw UsageError("duplicate parameter name '" + name + "'");
  index_.emplace(name, vars_.size());
  names_.push_back(name);
  vars_.push_back(Var::parameter(std::move(init)));
  return vars_.back();
}

Var& ParameterStore::get(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw UsageError("unknown parameter '" + std::string(name) + "'");
  return vars_[it->second];
}

const Var& ParameterStore::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw UsageError("unknown parameter '" + std::string(name) + "'");
  return vars_[it->second];
}

void ParameterStore::zero_grad() {
  for (Var& v : vars_) v.zero_grad();
}

int64_t ParameterStore::total_elements() const {
  int64_t n = 0;
  for (const Var& v : vars_) n += v.value().numel();
  return n;
}

}  // namespace pcdm
