#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "sodm/tape.hpp"
#include "sodm/tensor.hpp"

namespace sodm {

// Named parameter collection. Serialization order is declaration order and
// stable across runs; names are unique.
template <class T>
class Params {
 public:
  struct Entry {
    std::string name;
    Tensor4<T> tensor;
    bool learnable;
  };

  Tensor4<T>& add(const std::string& name, Tensor4<T> tensor, bool learnable = true) {
    if (index_.count(name)) throw LookupError("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back(Entry{name, std::move(tensor), learnable});
    return entries_.back().tensor;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor4<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("unknown parameter: " + name);
    return entries_[it->second].tensor;
  }
  const Tensor4<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("unknown parameter: " + name);
    return entries_[it->second].tensor;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  template <class U>
  Params<U> cast() const {
    Params<U> out;
    for (const auto& e : entries_) out.add(e.name, e.tensor.template cast<U>(), e.learnable);
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

using Paramsf = Params<float>;
using Paramsd = Params<double>;

// Binds a parameter set onto one tape, creating at most one leaf per
// parameter. Gradients are fetched back by leaf id after backward.
template <class T>
class TapedParams {
 public:
  TapedParams(Tape<T>& tape, Params<T>& params) : tape_(&tape), params_(&params) {}

  // Pre-assign an existing tape id to a parameter name (used by gradient
  // checking to route gradients to externally created leaves).
  void bind(const std::string& name, int id) { ids_[name] = id; }

  int id(const std::string& name) {
    auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    int id = tape_->leaf(params_->at(name));
    ids_[name] = id;
    return id;
  }

  Params<T>& params() { return *params_; }

  // leaf ids of learnable parameters bound so far, in declaration order
  std::vector<std::pair<std::string, int>> learnable_ids() const {
    std::vector<std::pair<std::string, int>> out;
    for (const auto& e : params_->entries()) {
      auto it = ids_.find(e.name);
      if (e.learnable && it != ids_.end()) out.emplace_back(e.name, it->second);
    }
    return out;
  }

 private:
  Tape<T>* tape_;
  Params<T>* params_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace sodm
