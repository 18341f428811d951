#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace rfvoice::nn {

using Mat = Eigen::MatrixXd;

struct Param {
  std::string name;
  Mat value;
  Mat grad;  // same shape as value
};

// Ordered, named parameter collection. The order defines the checkpoint and
// flattening layout.
class ParamSet {
 public:
  Param& add(std::string name, Mat init);
  std::size_t size() const { return params_.size(); }
  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t count() const;  // total scalar count
  void zero_grad();
  std::vector<double> flatten() const;
  std::vector<double> flatten_grad() const;
  void unflatten(std::span<const double> flat);  // throws ArgumentError on size mismatch
  bool same_shapes(const ParamSet& other) const;

 private:
  std::vector<Param> params_;
};

// Reverse-mode tape over dense matrices. Every op appends a node holding its
// value and, when gradients are recorded, a closure that propagates the
// node's gradient to its inputs. A graph built with record = false stores
// values only. backward() may run once per graph.
class Graph {
 public:
  struct Var {
    int id = -1;
  };

  explicit Graph(bool record = true) : record_(record) {}

  bool recording() const { return record_; }
  bool consumed() const { return consumed_; }

  const Mat& value(Var v) const;
  // Gradient accumulated for an interior node (after backward).
  const Mat& grad(Var v) const;

  Var input(Mat value);
  // Constant read in place; `m` must outlive the graph.
  Var constant_ref(const Mat& m);
  // Reads p.value in place; backward adds into p.grad.
  Var parameter(Param& p);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // element-wise
  Var scale(Var a, double s);
  Var add_col_bias(Var a, Var bias);  // bias is rows x 1
  Var sum(std::span<const Var> terms);
  Var rows(Var a, int start, int count);
  Var vstack(Var a, Var b);

  // Columns k = 0..count-1 hold x[k*stride .. k*stride+len), zero past the end. x is 1 x T.
  Var frame(Var x, int len, int stride, int count);
  // Inverse layout of frame: 1 x out_len sum of overlapping columns.
  Var overlap_add(Var frames, int stride, int out_len);
  // Rows [h(:, k-d); h(:, k); h(:, k+d)] with zero padding.
  Var shift_stack(Var h, int dilation);

  Var silu(Var a);
  Var sigmoid(Var a);
  Var sqrt_eps(Var a, double eps);  // sqrt(a + eps) - sqrt(eps)
  // Global layer norm over all entries, per-row gain, no bias: zero in, zero out.
  Var gln(Var x, Var gain, double eps = 1e-8);

  Var sq_norm(Var a);  // 1 x 1
  // Scalar loss of a 1 x T row; fn returns the value and writes d/d est into grad.
  Var scalar_fn(Var est, const std::function<double(std::span<const double>, std::span<double>)>& fn);

  // Seeds d loss/d loss = 1 (loss must be 1 x 1). Throws ArgumentError if the
  // graph does not record or was already consumed.
  void backward(Var loss);

 private:
  struct Node {
    Mat value;
    const Mat* external = nullptr;
    Mat grad;
    Mat* sink = nullptr;  // parameter gradient
    bool needs_grad = false;
    std::function<void()> back;
  };

  const Mat& val(int id) const { return nodes_[id].external ? *nodes_[id].external : nodes_[id].value; }
  Mat& g(int id) { return nodes_[id].grad; }
  bool needs(int id) const { return nodes_[id].needs_grad; }
  Var push(Mat value, bool needs_grad);
  void check(Var v) const;

  bool record_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
};

}  // namespace rfvoice::nn
