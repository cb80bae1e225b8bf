#include "foogd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace foogd {

const Tensor& Var::value() const { return tape->node(idx).value; }
const std::vector<std::size_t>& Var::shape() const { return value().shape(); }

CustomPrimitive register_custom_primitive(
    std::string name,
    std::function<Tensor(const std::vector<Tensor>&)> forward,
    std::function<std::vector<Tensor>(const Tensor&, const std::vector<Tensor>&,
                                      const Tensor&)>
        backward) {
  return CustomPrimitive{std::move(name), std::move(forward),
                         std::move(backward)};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::append(Tensor value, std::vector<std::size_t> parents,
                 std::function<void(Tape&, const Node&)> backward) {
  Node n;
  n.value = std::move(value);
  for (auto p : parents) n.requires_grad |= nodes_[p].requires_grad;
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t idx, const Tensor& g) {
  Node& n = nodes_[idx];
  if (!n.requires_grad) return;
  if (!n.grad_ready) {
    n.grad = Tensor::zeros(n.value.shape());
    n.grad_ready = true;
  }
  auto& dst = n.grad.data();
  const auto& src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var output) {
  if (output.tape != this)
    throw std::logic_error("backward: output not on this tape");
  if (nodes_[output.idx].value.size() != 1)
    throw std::invalid_argument("backward: output must be a scalar");
  for (auto& n : nodes_) {
    n.grad_ready = false;
    n.grad = Tensor();
  }
  accumulate(output.idx, Tensor::scalar(1.0));
  for (std::size_t i = output.idx + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (n.grad_ready && n.backward) n.backward(*this, n);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.idx];
  if (n.grad_ready) return n.grad;
  return Tensor::zeros(n.value.shape());
}

namespace {

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::logic_error("operands on different tapes");
}

// Returns true for exact-shape match, or broadcast of b over a's leading axis.
bool broadcast_ok(const Tensor& a, const Tensor& b, bool& bcast) {
  if (a.shape() == b.shape()) {
    bcast = false;
    return true;
  }
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() == sb.size() + 1 &&
      std::equal(sb.begin(), sb.end(), sa.begin() + 1)) {
    bcast = true;
    return true;
  }
  return false;
}

// Sums g over the leading axis so it matches shape (used for broadcast grads).
Tensor sum_leading(const Tensor& g, const std::vector<std::size_t>& shape) {
  Tensor out = Tensor::zeros(shape);
  std::size_t inner = out.size();
  if (inner == 0) return out;
  std::size_t reps = g.size() / inner;
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t i = 0; i < inner; ++i) out[i] += g[r * inner + i];
  return out;
}

Var binary_elementwise(Var a, Var b, const char* name,
                       double (*fwd)(double, double),
                       // dfa, dfb given (x, y, upstream)
                       double (*dfa)(double, double, double),
                       double (*dfb)(double, double, double)) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  bool bcast = false;
  if (!broadcast_ok(x, y, bcast))
    throw std::invalid_argument(std::string(name) + ": shape mismatch " +
                                shape_string(x.shape()) + " vs " +
                                shape_string(y.shape()));
  Tensor out(x.shape());
  std::size_t inner = y.size();
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = fwd(x[i], bcast ? y[i % inner] : y[i]);
  auto ai = a.idx, bi = b.idx;
  return t.append(std::move(out), {ai, bi},
                  [ai, bi, bcast, dfa, dfb](Tape& t, const Tape::Node& n) {
                    const Tensor& x = t.node(ai).value;
                    const Tensor& y = t.node(bi).value;
                    std::size_t inner = y.size();
                    Tensor ga(x.shape());
                    Tensor gb_full(x.shape());
                    for (std::size_t i = 0; i < x.size(); ++i) {
                      double yv = bcast ? y[i % inner] : y[i];
                      ga[i] = dfa(x[i], yv, n.grad[i]);
                      gb_full[i] = dfb(x[i], yv, n.grad[i]);
                    }
                    t.accumulate(ai, ga);
                    t.accumulate(bi, bcast ? sum_leading(gb_full, y.shape())
                                           : gb_full);
                  });
}

Var unary_elementwise(Var a, const char* /*name*/, double (*fwd)(double),
                      // derivative given (x, out, upstream)
                      double (*df)(double, double, double)) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  auto ai = a.idx;
  return t.append(std::move(out), {ai}, [ai, df](Tape& t, const Tape::Node& n) {
    const Tensor& x = t.node(ai).value;
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
      g[i] = df(x[i], n.value[i], n.grad[i]);
    t.accumulate(ai, g);
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g) { return g; },
      [](double, double, double g) { return g; });
}

Var sub(Var a, Var b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g) { return g; },
      [](double, double, double g) { return -g; });
}

Var mul(Var a, Var b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double g) { return g * y; },
      [](double x, double, double g) { return g * x; });
}

Var relu(Var a) {
  return unary_elementwise(
      a, "relu", [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double, double g) { return x > 0 ? g : 0.0; });
}

Var tanh_op(Var a) {
  return unary_elementwise(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y, double g) { return g * (1.0 - y * y); });
}

Var exp_op(Var a) {
  return unary_elementwise(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y, double g) { return g * y; });
}

Var square(Var a) {
  return unary_elementwise(
      a, "square", [](double x) { return x * x; },
      [](double x, double, double g) { return 2.0 * x * g; });
}

Var sqrt_op(Var a) {
  for (double v : a.value().data())
    if (v < 0.0) throw std::domain_error("sqrt: negative input");
  return unary_elementwise(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y, double g) { return g * 0.5 / y; });
}

Tensor matmul_value(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
  std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double av = a[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[p * n + j];
    }
  return out;
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  Tensor out = matmul_value(a.value(), b.value());
  auto ai = a.idx, bi = b.idx;
  return t.append(std::move(out), {ai, bi},
                  [ai, bi](Tape& t, const Tape::Node& n) {
                    const Tensor& A = t.node(ai).value;
                    const Tensor& B = t.node(bi).value;
                    std::size_t m = A.shape()[0], k = A.shape()[1],
                                c = B.shape()[1];
                    Tensor ga({m, k});
                    Tensor gb({k, c});
                    // ga = g * B^T ; gb = A^T * g
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < c; ++j) {
                        double gv = n.grad[i * c + j];
                        if (gv == 0.0) continue;
                        for (std::size_t p = 0; p < k; ++p) {
                          ga[i * k + p] += gv * B[p * c + j];
                          gb[p * c + j] += A[i * k + p] * gv;
                        }
                      }
                    t.accumulate(ai, ga);
                    t.accumulate(bi, gb);
                  });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  auto ai = a.idx;
  return t.append(Tensor::scalar(s), {ai}, [ai](Tape& t, const Tape::Node& n) {
    t.accumulate(ai, Tensor::full(t.node(ai).value.shape(), n.grad[0]));
  });
}

Var mean(Var a) {
  std::size_t n = a.value().size();
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var scale(Var a, double c) {
  Tape& t = *a.tape;
  Tensor out = a.value();
  for (auto& v : out.data()) v *= c;
  auto ai = a.idx;
  return t.append(std::move(out), {ai},
                  [ai, c](Tape& t, const Tape::Node& n) {
                    Tensor g = n.grad;
                    for (auto& v : g.data()) v *= c;
                    t.accumulate(ai, g);
                  });
}

Var concat_cols(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.ndim() != 2 || y.ndim() != 2 || x.rows() != y.rows())
    throw std::invalid_argument("concat_cols: row mismatch");
  std::size_t r = x.rows(), ca = x.cols(), cb = y.cols();
  Tensor out({r, ca + cb});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out.at(i, j) = x.at(i, j);
    for (std::size_t j = 0; j < cb; ++j) out.at(i, ca + j) = y.at(i, j);
  }
  auto ai = a.idx, bi = b.idx;
  return t.append(std::move(out), {ai, bi},
                  [ai, bi, r, ca, cb](Tape& t, const Tape::Node& n) {
                    Tensor ga({r, ca});
                    Tensor gb({r, cb});
                    for (std::size_t i = 0; i < r; ++i) {
                      for (std::size_t j = 0; j < ca; ++j)
                        ga.at(i, j) = n.grad.at(i, j);
                      for (std::size_t j = 0; j < cb; ++j)
                        gb.at(i, j) = n.grad.at(i, ca + j);
                    }
                    t.accumulate(ai, ga);
                    t.accumulate(bi, gb);
                  });
}

Var slice_cols(Var a, std::size_t lo, std::size_t hi) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  if (x.ndim() != 2 || hi > x.cols() || lo >= hi)
    throw std::invalid_argument("slice_cols: bad range");
  std::size_t r = x.rows(), c = hi - lo, full = x.cols();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = x.at(i, lo + j);
  auto ai = a.idx;
  return t.append(std::move(out), {ai},
                  [ai, lo, r, c, full](Tape& t, const Tape::Node& n) {
                    Tensor g({r, full});
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j)
                        g.at(i, lo + j) = n.grad.at(i, j);
                    t.accumulate(ai, g);
                  });
}

Var l2_norm_rows(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  if (x.ndim() != 2) throw std::invalid_argument("l2_norm_rows: not 2-D");
  std::size_t r = x.rows(), c = x.cols();
  Tensor out({r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += x.at(i, j) * x.at(i, j);
    out[i] = std::sqrt(s);
  }
  auto ai = a.idx;
  return t.append(std::move(out), {ai},
                  [ai, r, c](Tape& t, const Tape::Node& n) {
                    const Tensor& x = t.node(ai).value;
                    Tensor g({r, c});
                    for (std::size_t i = 0; i < r; ++i) {
                      double norm = n.value[i];
                      if (norm == 0.0) continue;  // subgradient 0 at the origin
                      for (std::size_t j = 0; j < c; ++j)
                        g.at(i, j) = n.grad[i] * x.at(i, j) / norm;
                    }
                    t.accumulate(ai, g);
                  });
}

Tensor softmax_rows_value(const Tensor& x) {
  if (x.ndim() != 2) throw std::invalid_argument("softmax: not 2-D");
  std::size_t r = x.rows(), c = x.cols();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    double mx = x.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out.at(i, j) = std::exp(x.at(i, j) - mx);
      s += out.at(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= s;
  }
  return out;
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  Tensor out = softmax_rows_value(a.value());
  auto ai = a.idx;
  std::size_t r = out.rows(), c = out.cols();
  return t.append(std::move(out), {ai},
                  [ai, r, c](Tape& t, const Tape::Node& n) {
                    Tensor g({r, c});
                    for (std::size_t i = 0; i < r; ++i) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < c; ++j)
                        dot += n.grad.at(i, j) * n.value.at(i, j);
                      for (std::size_t j = 0; j < c; ++j)
                        g.at(i, j) = n.value.at(i, j) * (n.grad.at(i, j) - dot);
                    }
                    t.accumulate(ai, g);
                  });
}

Var cross_entropy(Var logits, const std::vector<std::size_t>& labels) {
  Tape& t = *logits.tape;
  const Tensor& x = logits.value();
  if (x.ndim() != 2) throw std::invalid_argument("cross_entropy: not 2-D");
  std::size_t r = x.rows(), c = x.cols();
  if (labels.size() != r)
    throw std::invalid_argument("cross_entropy: label count mismatch");
  for (auto y : labels)
    if (y >= c) throw std::out_of_range("cross_entropy: label out of range");
  if (r == 0) throw std::invalid_argument("cross_entropy: empty batch");
  Tensor p = softmax_rows_value(x);
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i)
    loss -= std::log(std::max(p.at(i, labels[i]), 1e-300));
  loss /= static_cast<double>(r);
  auto ai = logits.idx;
  return t.append(Tensor::scalar(loss), {ai},
                  [ai, labels, p, r, c](Tape& t, const Tape::Node& n) {
                    // d/dlogits = (softmax - onehot) / B
                    Tensor g({r, c});
                    double inv = n.grad[0] / static_cast<double>(r);
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j)
                        g.at(i, j) =
                            inv * (p.at(i, j) - (j == labels[i] ? 1.0 : 0.0));
                    t.accumulate(ai, g);
                  });
}

Var custom_op(const CustomPrimitive& prim, std::vector<Var> inputs) {
  if (inputs.empty()) throw std::invalid_argument("custom_op: no inputs");
  Tape& t = *inputs[0].tape;
  std::vector<Tensor> vals;
  std::vector<std::size_t> parents;
  for (auto v : inputs) {
    check_same_tape(inputs[0], v);
    vals.push_back(v.value());
    parents.push_back(v.idx);
  }
  Tensor out = prim.forward(vals);
  auto bwd = prim.backward;
  return t.append(std::move(out), parents,
                  [parents, vals, bwd](Tape& t, const Tape::Node& n) {
                    std::vector<Tensor> grads = bwd(n.grad, vals, n.value);
                    for (std::size_t i = 0; i < parents.size(); ++i)
                      if (!grads[i].empty()) t.accumulate(parents[i], grads[i]);
                  });
}

}  // namespace foogd
