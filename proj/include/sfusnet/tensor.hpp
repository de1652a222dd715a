#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sfusnet/common.hpp"
#include "sfusnet/rng.hpp"

namespace sfus {

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

template <typename S>
class Tensor;

// One node of the reverse-mode graph. `apply` maps the gradient w.r.t. the
// node's output to gradients w.r.t. each input, in input order; an empty
// array means "no gradient requested for this input".
template <typename S>
struct GradFn {
  const char* name = "";
  std::vector<Tensor<S>> inputs;
  std::function<std::vector<ArrayX<S>>(const ArrayX<S>&)> apply;
};

template <typename S>
struct TensorImpl {
  Shape shape;
  ArrayX<S> data;
  ArrayX<S> grad;  // size 0 until the first accumulation
  bool requires_grad = false;
  std::shared_ptr<GradFn<S>> grad_fn;
};

// Graph recording switch; off during inference and finite-difference probes.
inline bool& grad_mode_enabled() {
  static thread_local bool enabled = true;
  return enabled;
}

class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_mode_enabled()) { grad_mode_enabled() = false; }
  ~NoGradGuard() { grad_mode_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major N-d array handle with an optional gradient slot. Copies
// share storage; values are treated as immutable once produced by an op.
template <typename S = double>
class Tensor {
 public:
  using Scalar = S;
  using Array = ArrayX<S>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<S>>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = Array::Zero(shape_numel(t.impl_->shape));
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, S value) {
    Tensor t = zeros(std::move(shape));
    t.impl_->data.setConstant(value);
    return t;
  }

  static Tensor scalar(S value) { return full({1}, value); }

  static Tensor from_array(Shape shape, Array data) {
    SFUS_CHECK_SHAPE(shape_numel(shape) == data.size(),
                     "tensor data length " << data.size() << " does not match shape "
                                           << shape_str(shape));
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<S>>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    return t;
  }

  static Tensor from_vector(Shape shape, const std::vector<S>& values) {
    Array a(static_cast<index_t>(values.size()));
    for (index_t i = 0; i < a.size(); ++i) a[i] = values[static_cast<std::size_t>(i)];
    return from_array(std::move(shape), std::move(a));
  }

  static Tensor randn(Shape shape, Rng& rng, S stddev = S(1)) {
    Tensor t = zeros(std::move(shape));
    for (index_t i = 0; i < t.numel(); ++i)
      t.impl_->data[i] = static_cast<S>(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  index_t dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  index_t numel() const { return impl_->data.size(); }

  S* data() { return impl_->data.data(); }
  const S* data() const { return impl_->data.data(); }
  Array& array() { return impl_->data; }
  const Array& array() const { return impl_->data; }

  S value() const {
    SFUS_CHECK_SHAPE(numel() == 1, "value() on non-scalar tensor " << shape_str(shape()));
    return impl_->data[0];
  }

  // Row-major multi-index accessor (test convenience).
  S at(std::initializer_list<index_t> idx) const {
    SFUS_CHECK_SHAPE(static_cast<int>(idx.size()) == ndim(), "rank mismatch in at()");
    index_t flat = 0;
    int d = 0;
    for (index_t i : idx) {
      flat = flat * impl_->shape[static_cast<std::size_t>(d)] + i;
      ++d;
    }
    return impl_->data[flat];
  }

  bool all_finite() const {
    return impl_->data.isFinite().all();
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    SFUS_CHECK(!impl_->grad_fn, "requires_grad can only be toggled on leaf tensors");
    impl_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return impl_->grad.size() > 0; }
  const Array& grad() const {
    SFUS_CHECK(has_grad(), "tensor has no accumulated gradient");
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.resize(0); }

  const std::shared_ptr<GradFn<S>>& grad_fn() const { return impl_->grad_fn; }
  bool is_leaf() const { return impl_->grad_fn == nullptr; }

  // Builds an op output: attaches a GradFn when recording is on and some
  // input requires grad.
  static Tensor make_op(Shape shape, Array data, const char* name, std::vector<Tensor> inputs,
                        std::function<std::vector<Array>(const Array&)> apply) {
    Tensor out = from_array(std::move(shape), std::move(data));
    if (!grad_mode_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    out.impl_->requires_grad = true;
    auto fn = std::make_shared<GradFn<S>>();
    fn->name = name;
    fn->inputs = std::move(inputs);
    fn->apply = std::move(apply);
    out.impl_->grad_fn = std::move(fn);
    return out;
  }

  void backward() const {
    SFUS_CHECK_SHAPE(numel() == 1, "backward() without a seed requires a scalar root");
    backward(Array::Ones(1));
  }

  void backward(Array seed) const {
    SFUS_CHECK(impl_ && impl_->requires_grad, "backward() on a tensor outside the graph");
    SFUS_CHECK_SHAPE(seed.size() == numel(), "seed gradient size mismatch");

    // Reverse post-order DFS gives a topological order: every consumer of a
    // node is visited before the node itself.
    std::vector<TensorImpl<S>*> order;
    std::unordered_set<TensorImpl<S>*> visited;
    struct Frame {
      TensorImpl<S>* node;
      std::size_t next_input;
    };
    std::vector<Frame> stack;
    stack.push_back({impl_.get(), 0});
    visited.insert(impl_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      GradFn<S>* fn = f.node->grad_fn.get();
      std::size_t n_inputs = fn ? fn->inputs.size() : 0;
      if (f.next_input < n_inputs) {
        TensorImpl<S>* child = fn->inputs[f.next_input].impl_.get();
        ++f.next_input;
        if (child->requires_grad && visited.insert(child).second) {
          stack.push_back({child, 0});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }

    std::unordered_map<TensorImpl<S>*, Array> grads;
    grads.emplace(impl_.get(), std::move(seed));

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorImpl<S>* node = *it;
      auto git = grads.find(node);
      if (git == grads.end()) continue;  // no contribution reached this node
      Array g = std::move(git->second);
      grads.erase(git);
      if (!node->grad_fn) {
        if (node->requires_grad) {
          if (node->grad.size() == 0) node->grad = Array::Zero(node->data.size());
          node->grad += g;
        }
        continue;
      }
      std::vector<Array> gins = node->grad_fn->apply(g);
      SFUS_CHECK(gins.size() == node->grad_fn->inputs.size(),
                 "op '" << node->grad_fn->name << "' returned wrong gradient count");
      for (std::size_t i = 0; i < gins.size(); ++i) {
        if (gins[i].size() == 0) continue;
        TensorImpl<S>* in = node->grad_fn->inputs[i].impl_.get();
        SFUS_CHECK_SHAPE(gins[i].size() == in->data.size(),
                         "op '" << node->grad_fn->name << "' gradient " << i << " size mismatch");
        auto [pos, inserted] = grads.try_emplace(in, std::move(gins[i]));
        if (!inserted) pos->second += gins[i];
      }
    }
  }

 private:
  std::shared_ptr<TensorImpl<S>> impl_;
};

}  // namespace sfus
