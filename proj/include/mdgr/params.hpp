#pragma once

#include <map>
#include <string>
#include <vector>

#include "mdgr/tensor.hpp"

namespace mdgr {

// Named dense arrays in insertion order. Used for model parameters, their
// gradients and the optimizer moments, which all share one layout.
template <class T>
class ParameterSet {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> value) {
    require(!index_.contains(name), ErrorKind::kInvalidArgument,
            "duplicate parameter name '" + name + "'");
    index_.emplace(name, tensors_.size());
    names_.push_back(name);
    tensors_.push_back(std::move(value));
    return tensors_.back();
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Tensor<T>& operator[](const std::string& name) { return tensors_[lookup(name)]; }
  const Tensor<T>& operator[](const std::string& name) const { return tensors_[lookup(name)]; }

  std::size_t size() const noexcept { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor<T>& at(std::size_t i) { return tensors_[i]; }
  const Tensor<T>& at(std::size_t i) const { return tensors_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  // Same names and shapes, zero-filled.
  ParameterSet zeros_like() const {
    ParameterSet out;
    for (std::size_t i = 0; i < size(); ++i) {
      out.add(names_[i], Tensor<T>(tensors_[i].shape()));
    }
    return out;
  }

  void set_zero() {
    for (auto& t : tensors_) t.fill(T{0});
  }

  template <class U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) {
      out.add(names_[i], tensors_[i].template cast<U>());
    }
    return out;
  }

  bool same_layout(const ParameterSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (other.names_[i] != names_[i] || other.tensors_[i].shape() != tensors_[i].shape()) {
        return false;
      }
    }
    return true;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorKind::kOutOfRange, "unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace mdgr
