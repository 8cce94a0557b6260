#ifndef OCNET_AUTOGRAD_HPP_
#define OCNET_AUTOGRAD_HPP_

#include <functional>
#include <memory>
#include <vector>

#include "ocnet/tensor.hpp"

namespace ocnet::ag {

// Reverse-mode autodiff over Tensor. A fresh graph is built per forward pass;
// parameter leaves persist across passes and accumulate gradients until
// zero_grad. Everything is single-threaded and deterministic.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // pulls this->grad into parents

  Tensor& ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros_like(value);
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad() {
    if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
  }
  double scalar() const;  // value of a single-element tensor

  std::shared_ptr<Node> node() const { return node_; }
  static Var from_node(std::shared_ptr<Node> n);

 private:
  std::shared_ptr<Node> node_;
};

// Leaf constructors.
Var constant(Tensor t);           // no gradient
Var leaf(Tensor t);               // gradient-tracked leaf (parameter or probed input)

// Elementwise / scalar ops (shapes must match where binary).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_const(const Var& a, double c);

Var relu(const Var& x);
Var sigmoid(const Var& x);

// x:[B,I], w:[O,I], b:[O] -> [B,O]
Var linear(const Var& x, const Var& w, const Var& b);

// x:[B,Ci,H,W], w:[Co,Ci/groups,kh,kw], b:[Co]; symmetric padding, floor conv.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups);

// [B,C,H,W] -> [B,C], spatial average per channel.
Var spatial_mean(const Var& x);

// [B,C,H,W] -> [B,C,h1-h0,W], rows h0..h1-1.
Var slice_h(const Var& x, int h0, int h1);

// [B,C,H,W] -> [B,C,hs,ws], window at (h0,w0).
Var crop(const Var& x, int h0, int w0, int hs, int ws);

// [B,1,H,W] -> [B,H*W] (single-channel map flattened row-major).
Var flatten_hw(const Var& x);

// [B,N] row softmax.
Var softmax_rows(const Var& x);

// p:[B,N], v:[B,C,H,W] with N == H*W -> [B,C]; out[b,c] = sum_n p[b,n] v[b,c,n].
Var attend(const Var& p, const Var& v);

// Column-wise concat of [B,d_i] -> [B, sum d_i]; slice recovers a slot.
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& x, int c0, int c1);

// Mean over all elements -> shape {1}.
Var mean_all(const Var& x);
Var sum_all(const Var& x);

// Per-row cosine similarity of a,b:[B,D] -> [B]. Norms guarded by +eps after
// the exact-zero precondition check.
Var rowwise_cosine(const Var& a, const Var& b, double eps = 1e-12);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  bool initialized = false;
};

// 1-D batch norm over [B,D]; training mode uses batch statistics and updates
// state; eval mode uses the running statistics.
Var batchnorm1d(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
                bool training, double momentum = 0.1, double eps = 1e-5);

// Backpropagate from a scalar (single-element) Var. Accumulates into leaf grads.
void backward(const Var& loss);

}  // namespace ocnet::ag

#endif  // OCNET_AUTOGRAD_HPP_
