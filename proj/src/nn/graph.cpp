#include "rfvoice/nn/graph.hpp"

#include <cmath>

#include "rfvoice/error.hpp"

namespace rfvoice::nn {

Param& ParamSet::add(std::string name, Mat init) {
  Mat grad = Mat::Zero(init.rows(), init.cols());
  params_.push_back({std::move(name), std::move(init), std::move(grad)});
  return params_.back();
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> out;
  out.reserve(count());
  for (const auto& p : params_) out.insert(out.end(), p.value.data(), p.value.data() + p.value.size());
  return out;
}

std::vector<double> ParamSet::flatten_grad() const {
  std::vector<double> out;
  out.reserve(count());
  for (const auto& p : params_) out.insert(out.end(), p.grad.data(), p.grad.data() + p.grad.size());
  return out;
}

void ParamSet::unflatten(std::span<const double> flat) {
  if (flat.size() != count()) throw ArgumentError("parameter vector size mismatch");
  std::size_t off = 0;
  for (auto& p : params_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), p.value.size(), p.value.data());
    off += static_cast<std::size_t>(p.value.size());
  }
}

bool ParamSet::same_shapes(const ParamSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].value.rows() != other.params_[i].value.rows() ||
        params_[i].value.cols() != other.params_[i].value.cols()) {
      return false;
    }
  }
  return true;
}

void Graph::check(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw ArgumentError("graph: invalid variable");
}

const Mat& Graph::value(Var v) const {
  check(v);
  return val(v.id);
}

const Mat& Graph::grad(Var v) const {
  check(v);
  return nodes_[v.id].grad;
}

Graph::Var Graph::push(Mat value, bool needs_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_ && needs_grad;
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Graph::Var Graph::input(Mat value) { return push(std::move(value), false); }

Graph::Var Graph::constant_ref(const Mat& m) {
  Node n;
  n.external = &m;
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Graph::Var Graph::parameter(Param& p) {
  Node n;
  n.external = &p.value;
  n.needs_grad = record_;
  n.sink = record_ ? &p.grad : nullptr;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  if (record_) nodes_[id].back = [this, id] { *nodes_[id].sink += nodes_[id].grad; };
  return {id};
}

Graph::Var Graph::matmul(Var a, Var b) {
  check(a);
  check(b);
  if (val(a.id).cols() != val(b.id).rows()) throw ArgumentError("matmul: shape mismatch");
  Mat out = val(a.id) * val(b.id);
  auto v = push(std::move(out), needs(a.id) || needs(b.id));
  if (needs(v.id)) {
    nodes_[v.id].back = [this, a, b, v] {
      const Mat& go = g(v.id);
      if (needs(a.id)) g(a.id).noalias() += go * val(b.id).transpose();
      if (needs(b.id)) g(b.id).noalias() += val(a.id).transpose() * go;
    };
  }
  return v;
}

Graph::Var Graph::add(Var a, Var b) {
  check(a);
  check(b);
  auto v = push(val(a.id) + val(b.id), needs(a.id) || needs(b.id));
  if (needs(v.id)) {
    nodes_[v.id].back = [this, a, b, v] {
      if (needs(a.id)) g(a.id) += g(v.id);
      if (needs(b.id)) g(b.id) += g(v.id);
    };
  }
  return v;
}

Graph::Var Graph::sub(Var a, Var b) {
  check(a);
  check(b);
  auto v = push(val(a.id) - val(b.id), needs(a.id) || needs(b.id));
  if (needs(v.id)) {
    nodes_[v.id].back = [this, a, b, v] {
      if (needs(a.id)) g(a.id) += g(v.id);
      if (needs(b.id)) g(b.id) -= g(v.id);
    };
  }
  return v;
}

Graph::Var Graph::mul(Var a, Var b) {
  check(a);
  check(b);
  auto v = push(val(a.id).cwiseProduct(val(b.id)), needs(a.id) || needs(b.id));
  if (needs(v.id)) {
    nodes_[v.id].back = [this, a, b, v] {
      if (needs(a.id)) g(a.id) += g(v.id).cwiseProduct(val(b.id));
      if (needs(b.id)) g(b.id) += g(v.id).cwiseProduct(val(a.id));
    };
  }
  return v;
}

Graph::Var Graph::scale(Var a, double s) {
  check(a);
  auto v = push(val(a.id) * s, needs(a.id));
  if (needs(v.id)) nodes_[v.id].back = [this, a, v, s] { g(a.id) += g(v.id) * s; };
  return v;
}

Graph::Var Graph::add_col_bias(Var a, Var bias) {
  check(a);
  check(bias);
  if (val(bias.id).cols() != 1 || val(bias.id).rows() != val(a.id).rows()) throw ArgumentError("bias: shape mismatch");
  Mat out = val(a.id).colwise() + val(bias.id).col(0);
  auto v = push(std::move(out), needs(a.id) || needs(bias.id));
  if (needs(v.id)) {
    nodes_[v.id].back = [this, a, bias, v] {
      if (needs(a.id)) g(a.id) += g(v.id);
      if (needs(bias.id)) g(bias.id) += g(v.id).rowwise().sum();
    };
  }
  return v;
}

Graph::Var Graph::sum(std::span<const Var> terms) {
  if (terms.empty()) throw ArgumentError("sum: no terms");
  Mat out = val(terms[0].id);
  bool any = needs(terms[0].id);
  for (std::size_t i = 1; i < terms.size(); ++i) {
    check(terms[i]);
    out += val(terms[i].id);
    any = any || needs(terms[i].id);
  }
  auto v = push(std::move(out), any);
  if (needs(v.id)) {
    std::vector<Var> ts(terms.begin(), terms.end());
    nodes_[v.id].back = [this, ts, v] {
      for (auto t : ts) {
        if (needs(t.id)) g(t.id) += g(v.id);
      }
    };
  }
  return v;
}

Graph::Var Graph::rows(Var a, int start, int count) {
  check(a);
  if (start < 0 || count < 0 || start + count > val(a.id).rows()) throw ArgumentError("rows: out of range");
  auto v = push(val(a.id).middleRows(start, count), needs(a.id));
  if (needs(v.id)) nodes_[v.id].back = [this, a, v, start, count] { g(a.id).middleRows(start, count) += g(v.id); };
  return v;
}

Graph::Var Graph::vstack(Var a, Var b) {
  check(a);
  check(b);
  const Mat& A = val(a.id);
  const Mat& B = val(b.id);
  if (A.cols() != B.cols()) throw ArgumentError("vstack: column mismatch");
  Mat out(A.rows() + B.rows(), A.cols());
  out << A, B;
  const auto ra = A.rows();
  const auto rb = B.rows();
  auto v = push(std::move(out), needs(a.id) || needs(b.id));
  if (needs(v.id)) {
    nodes_[v.id].back = [this, a, b, v, ra, rb] {
      if (needs(a.id)) g(a.id) += g(v.id).topRows(ra);
      if (needs(b.id)) g(b.id) += g(v.id).bottomRows(rb);
    };
  }
  return v;
}

Graph::Var Graph::frame(Var x, int len, int stride, int count) {
  check(x);
  const Mat& X = val(x.id);
  if (X.rows() != 1) throw ArgumentError("frame: expects a 1 x T row");
  const Eigen::Index n = X.cols();
  Mat out = Mat::Zero(len, count);
  for (int k = 0; k < count; ++k) {
    const Eigen::Index s = static_cast<Eigen::Index>(k) * stride;
    const Eigen::Index avail = std::max<Eigen::Index>(0, std::min<Eigen::Index>(len, n - s));
    if (avail > 0) out.col(k).head(avail) = X.row(0).segment(s, avail).transpose();
  }
  auto v = push(std::move(out), needs(x.id));
  if (needs(v.id)) {
    nodes_[v.id].back = [this, x, v, len, stride, count, n] {
      Mat& gx = g(x.id);
      const Mat& go = g(v.id);
      for (int k = 0; k < count; ++k) {
        const Eigen::Index s = static_cast<Eigen::Index>(k) * stride;
        const Eigen::Index avail = std::max<Eigen::Index>(0, std::min<Eigen::Index>(len, n - s));
        if (avail > 0) gx.row(0).segment(s, avail) += go.col(k).head(avail).transpose();
      }
    };
  }
  return v;
}

Graph::Var Graph::overlap_add(Var frames, int stride, int out_len) {
  check(frames);
  const Mat& F = val(frames.id);
  const Eigen::Index len = F.rows();
  const Eigen::Index count = F.cols();
  Mat out = Mat::Zero(1, out_len);
  for (Eigen::Index k = 0; k < count; ++k) {
    const Eigen::Index s = k * stride;
    const Eigen::Index avail = std::max<Eigen::Index>(0, std::min<Eigen::Index>(len, out_len - s));
    if (avail > 0) out.row(0).segment(s, avail) += F.col(k).head(avail).transpose();
  }
  auto v = push(std::move(out), needs(frames.id));
  if (needs(v.id)) {
    nodes_[v.id].back = [this, frames, v, stride, out_len, len, count] {
      Mat& gf = g(frames.id);
      const Mat& go = g(v.id);
      for (Eigen::Index k = 0; k < count; ++k) {
        const Eigen::Index s = k * stride;
        const Eigen::Index avail = std::max<Eigen::Index>(0, std::min<Eigen::Index>(len, out_len - s));
        if (avail > 0) gf.col(k).head(avail) += go.row(0).segment(s, avail).transpose();
      }
    };
  }
  return v;
}

Graph::Var Graph::shift_stack(Var h, int d) {
  check(h);
  const Mat& H = val(h.id);
  const Eigen::Index r = H.rows();
  const Eigen::Index k = H.cols();
  Mat out = Mat::Zero(3 * r, k);
  const Eigen::Index w = std::max<Eigen::Index>(0, k - d);
  if (w > 0) {
    out.block(0, d, r, w) = H.leftCols(w);       // column j holds h(:, j - d)
    out.block(2 * r, 0, r, w) = H.rightCols(w);  // column j holds h(:, j + d)
  }
  out.middleRows(r, r) = H;
  auto v = push(std::move(out), needs(h.id));
  if (needs(v.id)) {
    nodes_[v.id].back = [this, h, v, r, w, d] {
      Mat& gh = g(h.id);
      const Mat& go = g(v.id);
      if (w > 0) {
        gh.leftCols(w) += go.block(0, d, r, w);
        gh.rightCols(w) += go.block(2 * r, 0, r, w);
      }
      gh += go.middleRows(r, r);
    };
  }
  return v;
}

Graph::Var Graph::silu(Var a) {
  check(a);
  const Mat& A = val(a.id);
  Mat out = A.unaryExpr([](double x) { return x / (1.0 + std::exp(-x)); });
  auto v = push(std::move(out), needs(a.id));
  if (needs(v.id)) {
    nodes_[v.id].back = [this, a, v] {
      const Mat& A = val(a.id);
      g(a.id) += g(v.id).cwiseProduct(A.unaryExpr([](double x) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      }));
    };
  }
  return v;
}

Graph::Var Graph::sigmoid(Var a) {
  check(a);
  Mat out = val(a.id).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  auto v = push(std::move(out), needs(a.id));
  if (needs(v.id)) {
    nodes_[v.id].back = [this, a, v] {
      const Mat& s = val(v.id);
      g(a.id) += g(v.id).cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()));
    };
  }
  return v;
}

Graph::Var Graph::sqrt_eps(Var a, double eps) {
  check(a);
  const double root = std::sqrt(eps);
  Mat out = val(a.id).unaryExpr([eps, root](double x) { return std::sqrt(x + eps) - root; });
  auto v = push(std::move(out), needs(a.id));
  if (needs(v.id)) {
    nodes_[v.id].back = [this, a, v, eps] {
      g(a.id) += g(v.id).cwiseProduct(val(a.id).unaryExpr([eps](double x) { return 0.5 / std::sqrt(x + eps); }));
    };
  }
  return v;
}

Graph::Var Graph::gln(Var x, Var gain, double eps) {
  check(x);
  check(gain);
  const Mat& X = val(x.id);
  const Mat& G = val(gain.id);
  if (G.cols() != 1 || G.rows() != X.rows()) throw ArgumentError("gln: gain shape mismatch");
  const double n = static_cast<double>(X.size());
  const double mu = X.mean();
  const double var = (X.array() - mu).square().sum() / n;
  const double inv = 1.0 / std::sqrt(var + eps);
  Mat xhat = (X.array() - mu).matrix() * inv;
  Mat out = xhat.array().colwise() * G.col(0).array();
  auto v = push(std::move(out), needs(x.id) || needs(gain.id));
  if (needs(v.id)) {
    nodes_[v.id].back = [this, x, gain, v, inv, xhat = std::move(xhat)] {
      const Mat& go = g(v.id);
      if (needs(gain.id)) g(gain.id) += go.cwiseProduct(xhat).rowwise().sum();
      if (needs(x.id)) {
        Mat dxhat = go.array().colwise() * val(gain.id).col(0).array();
        const double m1 = dxhat.mean();
        const double m2 = dxhat.cwiseProduct(xhat).mean();
        g(x.id) += ((dxhat.array() - m1 - xhat.array() * m2) * inv).matrix();
      }
    };
  }
  return v;
}

Graph::Var Graph::sq_norm(Var a) {
  check(a);
  Mat out(1, 1);
  out(0, 0) = val(a.id).squaredNorm();
  auto v = push(std::move(out), needs(a.id));
  if (needs(v.id)) nodes_[v.id].back = [this, a, v] { g(a.id) += 2.0 * g(v.id)(0, 0) * val(a.id); };
  return v;
}

Graph::Var Graph::scalar_fn(Var est, const std::function<double(std::span<const double>, std::span<double>)>& fn) {
  check(est);
  const Mat& E = val(est.id);
  if (E.rows() != 1) throw ArgumentError("scalar_fn: expects a 1 x T row");
  Mat local_grad;
  std::span<double> grad_span;
  if (needs(est.id)) {
    local_grad = Mat::Zero(1, E.cols());
    grad_span = std::span<double>(local_grad.data(), static_cast<std::size_t>(local_grad.size()));
  }
  Mat out(1, 1);
  out(0, 0) = fn(std::span<const double>(E.data(), static_cast<std::size_t>(E.size())), grad_span);
  auto v = push(std::move(out), needs(est.id));
  if (needs(v.id)) {
    nodes_[v.id].back = [this, est, v, lg = std::move(local_grad)] { g(est.id) += g(v.id)(0, 0) * lg; };
  }
  return v;
}

void Graph::backward(Var loss) {
  check(loss);
  if (!record_) throw ArgumentError("backward: graph was built without gradient recording");
  if (consumed_) throw ArgumentError("backward: graph already consumed");
  if (val(loss.id).size() != 1) throw ArgumentError("backward: loss must be a scalar");
  consumed_ = true;
  for (auto& n : nodes_) {
    if (n.needs_grad) {
      const Mat& v = n.external ? *n.external : n.value;
      n.grad = Mat::Zero(v.rows(), v.cols());
    }
  }
  if (!nodes_[loss.id].needs_grad) return;
  nodes_[loss.id].grad(0, 0) = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    if (nodes_[id].needs_grad && nodes_[id].back) nodes_[id].back();
  }
  // Release intermediate storage; values stay readable.
  for (auto& n : nodes_) n.back = nullptr;
}

}  // namespace rfvoice::nn
