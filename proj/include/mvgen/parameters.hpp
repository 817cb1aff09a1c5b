#pragma once

#include "mvgen/autograd.hpp"

#include <map>
#include <string>
#include <vector>

namespace mvgen {

/// Named tensors in registration order. The order is the serialization and
/// optimizer order.
template <typename Scalar>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor<Scalar> value;
  };

  void add(std::string name, Tensor<Scalar> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value)});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return entries_.size(); }
  std::size_t position(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
  }

  Tensor<Scalar>& operator[](const std::string& name) { return entries_[position(name)].value; }
  const Tensor<Scalar>& operator[](const std::string& name) const { return entries_[position(name)].value; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  Index total_size() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<Other>());
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Graph leaves bound to a ParameterSet, either trainable or constant.
template <typename Scalar>
class BoundParameters {
 public:
  BoundParameters(const ParameterSet<Scalar>& params, bool trainable) : params_(&params) {
    vars_.reserve(params.size());
    for (const auto& e : params.entries()) {
      vars_.push_back(trainable ? Var<Scalar>::parameter(e.value) : Var<Scalar>::constant(e.value));
    }
  }

  const Var<Scalar>& operator[](const std::string& name) const { return vars_[params_->position(name)]; }
  const std::vector<Var<Scalar>>& vars() const { return vars_; }
  const ParameterSet<Scalar>& source() const { return *params_; }

  std::vector<Tensor<Scalar>> gradients(const Gradients<Scalar>& grads) const {
    std::vector<Tensor<Scalar>> out;
    out.reserve(vars_.size());
    for (const auto& v : vars_) out.push_back(grads.of(v));
    return out;
  }

 private:
  const ParameterSet<Scalar>* params_;
  std::vector<Var<Scalar>> vars_;
};

}  // namespace mvgen
