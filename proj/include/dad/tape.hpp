#pragma once

#include <functional>

#include "dad/tensor.hpp"

namespace dad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Trainable tensor with a persistent gradient accumulator.
struct Param {
  Tensor value;
  Tensor grad;

  Param() = default;
  explicit Param(Tensor v) : value(std::move(v)) {}

  void zero_grad() {
    if (grad.shape != value.shape) grad = Tensor(value.shape);
    grad.fill(0);
  }
};

// Reverse-mode tape. A fresh Tape is built per forward pass; backward() runs
// the recorded closures in reverse creation order, which is a valid reverse
// topological order by construction.
class Tape {
 public:
  Var leaf(Tensor v, bool needs_grad = false);
  Var constant(const Tensor& v) { return leaf(v, false); }
  // Copies the param value in; collect_param_grads() routes gradients back.
  Var use(Param& p);

  const Tensor& val(Var x) const { return nodes_[size_t(x.id)].val; }
  bool needs_grad(Var x) const { return nodes_[size_t(x.id)].needs_grad; }
  Tensor& grad(Var x);

  // elementwise / scalar
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, real s);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var rsqrt(Var a, real eps);  // 1/sqrt(x+eps)
  Var detach(Var a);
  Var reshape(Var a, std::vector<int> shape);

  // reductions
  Var sum_all(Var a);   // -> [1]
  Var mean_all(Var a);  // -> [1]
  Var mse(Var a, Var b);  // mean squared difference -> [1]

  // linear algebra / nn
  Var matmul(Var a, Var b);                    // [m,k]x[k,n]
  Var linear(Var x, Var w, Var b);             // x[B,I], w[O,I], b[O] -> [B,O]
  Var conv2d(Var x, Var w, Var b, int stride, int pad);
  Var global_avgpool(Var x);                   // [B,C,H,W] -> [B,C]
  Var upsample2x(Var x);                       // nearest neighbor
  Var embed(Var table, std::vector<int> idx);  // rows of [K,d] -> [L,d]

  // per-channel broadcasts over [B,C,H,W]
  Var channel_mean(Var x);           // -> [C], mean over B,H,W
  Var channel_mul(Var x, Var s);     // x * s[c]
  Var channel_add(Var x, Var s);     // x + s[c]

  // [B,C,H,W] <-> [B*H*W, C]; rows ordered (b, h, w)
  Var nchw_to_rows(Var x);
  Var rows_to_nchw(Var rows, int B, int C, int H, int W);

  // losses (mean over batch rows)
  Var cross_entropy(Var logits, std::vector<int> labels);
  // t^2 * KL(softmax(teacher/t) || softmax(student/t)); teacher is constant.
  Var kl_temp(Var student_logits, Tensor teacher_logits, real t);

  void backward(Var root);
  void collect_param_grads();

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    bool needs_grad = false;
    bool grad_alloc = false;
    std::function<void(Tape&, Var)> back;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<int, Param*>> param_uses_;

  Var push(Tensor val, bool needs_grad, std::function<void(Tape&, Var)> back);
  void add_into_grad(Var x, const Tensor& g);
};

// Central-difference gradient of a scalar-valued function at x[i].
// Shared test oracle; independent of the tape's backward path.
real central_diff(const std::function<real(const Tensor&)>& f, Tensor x, int64_t i, real h = 1e-5);

}  // namespace dad
