#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sodm/tensor.hpp"

namespace sodm {

// Reverse-mode tape. One node per public operation; each node stores the ids
// of its inputs and a closure producing the vector-Jacobian product for each
// input given the output gradient. Ids are topologically ordered by
// construction (inputs always precede their consumers).
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<std::vector<Tensor4<T>>(const Tensor4<T>& grad_out)>;

  int leaf(Tensor4<T> v) {
    values_.push_back(std::move(v));
    nodes_.push_back(Node{{}, nullptr});
    return static_cast<int>(values_.size()) - 1;
  }

  int push(Tensor4<T> v, std::vector<int> inputs, BackwardFn backward) {
    for (int id : inputs) check_id(id);
    values_.push_back(std::move(v));
    nodes_.push_back(Node{std::move(inputs), std::move(backward)});
    return static_cast<int>(values_.size()) - 1;
  }

  const Tensor4<T>& val(int id) const {
    check_id(id);
    return values_[id];
  }

  size_t size() const { return values_.size(); }

  // Vector-Jacobian products of values_[output_id] w.r.t. every id on the
  // tape that receives gradient; ids off every path to the output get a zero
  // tensor in the result when listed in `leaves`.
  std::map<int, Tensor4<T>> backward(int output_id, const Tensor4<T>& seed,
                                     const std::vector<int>& leaves) const {
    check_id(output_id);
    if (!seed.same_dims(values_[output_id]))
      throw ShapeError("seed gradient " + seed.shape_str() + " does not match output " +
                       values_[output_id].shape_str());

    std::vector<Tensor4<T>> grads(values_.size());
    std::vector<bool> has_grad(values_.size(), false);
    grads[output_id] = seed;
    has_grad[output_id] = true;

    for (int id = output_id; id >= 0; --id) {
      if (!has_grad[id] || !nodes_[id].backward) continue;
      std::vector<Tensor4<T>> in_grads = nodes_[id].backward(grads[id]);
      const auto& inputs = nodes_[id].inputs;
      if (in_grads.size() != inputs.size())
        throw LookupError("backward rule for node " + std::to_string(id) +
                          " returned wrong gradient count");
      for (size_t k = 0; k < inputs.size(); ++k) {
        int in = inputs[k];
        if (in_grads[k].numel() == 0) continue;  // rule declares no gradient for this input
        if (!has_grad[in]) {
          grads[in] = std::move(in_grads[k]);
          has_grad[in] = true;
        } else {
          grads[in] = add(grads[in], in_grads[k]);
        }
      }
    }

    std::map<int, Tensor4<T>> out;
    for (int id : leaves) {
      check_id(id);
      out[id] = has_grad[id] ? grads[id] : Tensor4<T>::zeros_like(values_[id]);
    }
    return out;
  }

 private:
  struct Node {
    std::vector<int> inputs;
    BackwardFn backward;
  };

  void check_id(int id) const {
    if (id < 0 || id >= static_cast<int>(values_.size()))
      throw LookupError("unknown tape id " + std::to_string(id));
  }

  std::vector<Tensor4<T>> values_;
  std::vector<Node> nodes_;
};

using Tapef = Tape<float>;
using Taped = Tape<double>;

}  // namespace sodm
