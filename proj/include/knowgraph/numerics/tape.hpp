#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "knowgraph/error.hpp"
#include "knowgraph/numerics/tensor.hpp"

namespace knowgraph {

struct Var {
  std::size_t id = 0;
};

using Gradients = std::map<std::string, Tensor>;

// Weighted sparse operator given as (row, col, weight) triplets; applied as y = S x.
struct SparseOperator {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> row_index;
  std::vector<std::uint32_t> col_index;
  std::vector<double> weight;

  std::size_t nnz() const noexcept { return weight.size(); }

  void push(std::uint32_t r, std::uint32_t c, double w) {
    row_index.push_back(r);
    col_index.push_back(c);
    weight.push_back(w);
  }

  Tensor apply(const Tensor& x) const {
    if (x.rows() != cols) {
      throw ShapeError("spmm: operator " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " applied to " + x.shape());
    }
    Tensor y(rows, x.cols());
    for (std::size_t e = 0; e < nnz(); ++e) {
      const auto src = x.row(col_index[e]);
      auto dst = y.row(row_index[e]);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += weight[e] * src[j];
    }
    return y;
  }

  Tensor apply_transpose(const Tensor& g) const {
    Tensor y(cols, g.cols());
    for (std::size_t e = 0; e < nnz(); ++e) {
      const auto src = g.row(row_index[e]);
      auto dst = y.row(col_index[e]);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += weight[e] * src[j];
    }
    return y;
  }
};

// Reverse-mode recorder. Every primitive appends one node; backward() walks
// the nodes in reverse recording order exactly once. Nodes hold indices into
// the tape, so a Tape is pinned in place once recording starts.
class Tape {
 public:
  using Backprop = std::function<void(const Tensor& grad_out, std::vector<Tensor>& grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return record("constant", std::move(value), nullptr); }

  // Registers a named parameter. Asking again for a registered name returns the
  // same node, so shared parameters accumulate gradient additively.
  Var param(const std::string& name, const Tensor& value) {
    if (auto it = params_.find(name); it != params_.end()) return it->second;
    Var v = record("param", value, nullptr);
    params_.emplace(name, v);
    return v;
  }

  std::map<std::string, Var> params(const ParamSet& set) {
    std::map<std::string, Var> out;
    for (const auto& [name, t] : set) out.emplace(name, param(name, t));
    return out;
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // ---- primitives ----

  Var matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.rows()) shape_fail("matmul", A, B);
    return record("matmul", knowgraph::matmul(A, B), [this, a, b](const Tensor& g, std::vector<Tensor>& grads) {
      accumulate(grads, a, matmul_nt(g, value(b)));
      accumulate(grads, b, matmul_tn(value(a), g));
    });
  }

  // Same-shape addition, or b given as a 1 x C row broadcast over the rows of a.
  Var add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.same_shape(B)) {
      Tensor out = A;
      out += B;
      return record("add", std::move(out), [a, b](const Tensor& g, std::vector<Tensor>& grads) {
        accumulate(grads, a, g);
        accumulate(grads, b, g);
      });
    }
    if (B.rows() != 1 || B.cols() != A.cols()) shape_fail("add", A, B);
    Tensor out = A;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += B(0, j);
    return record("add", std::move(out), [a, b](const Tensor& g, std::vector<Tensor>& grads) {
      accumulate(grads, a, g);
      Tensor gb(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
      accumulate(grads, b, gb);
    });
  }

  Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

  Var mul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) shape_fail("mul", A, B);
    Tensor out(A.rows(), A.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
    return record("mul", std::move(out), [this, a, b](const Tensor& g, std::vector<Tensor>& grads) {
      const Tensor& A = value(a);
      const Tensor& B = value(b);
      Tensor ga(g.rows(), g.cols()), gb(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] = g[i] * B[i];
        gb[i] = g[i] * A[i];
      }
      accumulate(grads, a, ga);
      accumulate(grads, b, gb);
    });
  }

  Var scale(Var a, double s) {
    Tensor out = value(a);
    for (auto& v : out.values()) v *= s;
    return record("scale", std::move(out), [a, s](const Tensor& g, std::vector<Tensor>& grads) {
      Tensor ga = g;
      for (auto& v : ga.values()) v *= s;
      accumulate(grads, a, ga);
    });
  }

  Var relu(Var a) {
    Tensor out = value(a);
    for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
    return record("relu", std::move(out), [this, a](const Tensor& g, std::vector<Tensor>& grads) {
      const Tensor& A = value(a);
      Tensor ga(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = A[i] > 0.0 ? g[i] : 0.0;
      accumulate(grads, a, ga);
    });
  }

  Var sigmoid(Var a) {
    Tensor out = value(a);
    for (auto& v : out.values()) v = knowgraph::sigmoid(v);
    const std::size_t self = nodes_.size();
    return record("sigmoid", std::move(out), [this, a, self](const Tensor& g, std::vector<Tensor>& grads) {
      const Tensor& y = nodes_[self].value;
      Tensor ga(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[i] * (1.0 - y[i]);
      accumulate(grads, a, ga);
    });
  }

  Var tanh(Var a) {
    Tensor out = value(a);
    for (auto& v : out.values()) v = std::tanh(v);
    const std::size_t self = nodes_.size();
    return record("tanh", std::move(out), [this, a, self](const Tensor& g, std::vector<Tensor>& grads) {
      const Tensor& y = nodes_[self].value;
      Tensor ga(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (1.0 - y[i] * y[i]);
      accumulate(grads, a, ga);
    });
  }

  // Natural log with the input clamped to [1e-12, 1 - 1e-12]; the gradient is
  // zero where the clamp is active.
  Var log(Var a) {
    Tensor out = value(a);
    for (auto& v : out.values()) v = std::log(clamp_prob(v));
    return record("log", std::move(out), [this, a](const Tensor& g, std::vector<Tensor>& grads) {
      const Tensor& A = value(a);
      Tensor ga(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const bool inside = A[i] >= kProbClamp && A[i] <= 1.0 - kProbClamp;
        ga[i] = inside ? g[i] / A[i] : 0.0;
      }
      accumulate(grads, a, ga);
    });
  }

  Var sum(Var a) {
    double s = 0.0;
    for (double v : value(a).values()) s += v;
    return record("sum", Tensor::scalar(s), [this, a](const Tensor& g, std::vector<Tensor>& grads) {
      const Tensor& A = value(a);
      accumulate(grads, a, Tensor(A.rows(), A.cols(), g.item()));
    });
  }

  Var mean(Var a) {
    const std::size_t n = value(a).size();
    if (n == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
  }

  // Divides each row by its sum. Rows must have a nonzero sum.
  Var row_normalize(Var a) {
    const Tensor& A = value(a);
    Tensor out = A;
    std::vector<double> sums(A.rows(), 0.0);
    for (std::size_t i = 0; i < A.rows(); ++i) {
      for (double v : A.row(i)) sums[i] += v;
      if (sums[i] == 0.0) throw NumericError("row_normalize: row " + std::to_string(i) + " sums to zero");
      for (auto& v : out.row(i)) v /= sums[i];
    }
    const std::size_t self = nodes_.size();
    return record("row_normalize", std::move(out),
                  [this, a, self, sums = std::move(sums)](const Tensor& g, std::vector<Tensor>& grads) {
                    const Tensor& y = nodes_[self].value;
                    Tensor ga(g.rows(), g.cols());
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
                      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) = (g(i, j) - dot) / sums[i];
                    }
                    accumulate(grads, a, ga);
                  });
  }

  Var gather_rows(Var a, std::vector<std::uint32_t> index) {
    const Tensor& A = value(a);
    Tensor out(index.size(), A.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= A.rows()) {
        throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of " + A.shape());
      }
      const auto src = A.row(index[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return record("gather_rows", std::move(out),
                  [this, a, index = std::move(index)](const Tensor& g, std::vector<Tensor>& grads) {
                    const Tensor& A = value(a);
                    Tensor ga(A.rows(), A.cols());
                    for (std::size_t i = 0; i < index.size(); ++i) {
                      auto dst = ga.row(index[i]);
                      const auto src = g.row(i);
                      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
                    }
                    accumulate(grads, a, ga);
                  });
  }

  Var scatter_add_rows(Var a, std::vector<std::uint32_t> index, std::size_t out_rows) {
    const Tensor& A = value(a);
    if (index.size() != A.rows()) {
      throw ShapeError("scatter_add_rows: " + std::to_string(index.size()) + " indices for " + A.shape());
    }
    Tensor out(out_rows, A.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= out_rows) throw ShapeError("scatter_add_rows: index out of range");
      auto dst = out.row(index[i]);
      const auto src = A.row(i);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
    return record("scatter_add_rows", std::move(out),
                  [a, index = std::move(index)](const Tensor& g, std::vector<Tensor>& grads) {
                    Tensor ga(index.size(), g.cols());
                    for (std::size_t i = 0; i < index.size(); ++i) {
                      const auto src = g.row(index[i]);
                      std::copy(src.begin(), src.end(), ga.row(i).begin());
                    }
                    accumulate(grads, a, ga);
                  });
  }

  // Multiplies row i by the constant coeffs[i].
  Var scale_rows(Var a, std::vector<double> coeffs) {
    const Tensor& A = value(a);
    if (coeffs.size() != A.rows()) throw ShapeError("scale_rows: coefficient count vs " + A.shape());
    Tensor out = A;
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (auto& v : out.row(i)) v *= coeffs[i];
    return record("scale_rows", std::move(out),
                  [a, coeffs = std::move(coeffs)](const Tensor& g, std::vector<Tensor>& grads) {
                    Tensor ga = g;
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (auto& v : ga.row(i)) v *= coeffs[i];
                    accumulate(grads, a, ga);
                  });
  }

  // Sparse-dense product S x with a constant operator S.
  Var spmm(const SparseOperator& op, Var x) {
    Tensor out = op.apply(value(x));
    return record("spmm", std::move(out), [&op, x](const Tensor& g, std::vector<Tensor>& grads) {
      accumulate(grads, x, op.apply_transpose(g));
    });
  }

  // Row-wise inner product of equal-shaped a and b, giving an n x 1 column.
  Var row_dot(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) shape_fail("row_dot", A, B);
    Tensor out(A.rows(), 1);
    for (std::size_t i = 0; i < A.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < A.cols(); ++j) s += A(i, j) * B(i, j);
      out(i, 0) = s;
    }
    return record("row_dot", std::move(out), [this, a, b](const Tensor& g, std::vector<Tensor>& grads) {
      const Tensor& A = value(a);
      const Tensor& B = value(b);
      Tensor ga(A.rows(), A.cols()), gb(A.rows(), A.cols());
      for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t j = 0; j < A.cols(); ++j) {
          ga(i, j) = g(i, 0) * B(i, j);
          gb(i, j) = g(i, 0) * A(i, j);
        }
      accumulate(grads, a, ga);
      accumulate(grads, b, gb);
    });
  }

  Var concat_cols(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rows() != B.rows()) shape_fail("concat_cols", A, B);
    Tensor out(A.rows(), A.cols() + B.cols());
    for (std::size_t i = 0; i < A.rows(); ++i) {
      std::copy(A.row(i).begin(), A.row(i).end(), out.row(i).begin());
      std::copy(B.row(i).begin(), B.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(A.cols()));
    }
    const std::size_t ac = A.cols();
    return record("concat_cols", std::move(out), [a, b, ac](const Tensor& g, std::vector<Tensor>& grads) {
      Tensor ga(g.rows(), ac), gb(g.rows(), g.cols() - ac);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < ac; ++j) ga(i, j) = g(i, j);
        for (std::size_t j = ac; j < g.cols(); ++j) gb(i, j - ac) = g(i, j);
      }
      accumulate(grads, a, ga);
      accumulate(grads, b, gb);
    });
  }

  // Mean binary cross-entropy between sigmoid(logits) and constant targets in
  // [0,1], evaluated in the numerically stable softplus form.
  Var bce_with_logits(Var logits, const Tensor& targets) {
    const Tensor& L = value(logits);
    if (!L.same_shape(targets)) shape_fail("bce_with_logits", L, targets);
    if (L.empty()) throw ShapeError("bce_with_logits: empty batch");
    double loss = 0.0;
    for (std::size_t i = 0; i < L.size(); ++i) loss += softplus(L[i]) - targets[i] * L[i];
    const double n = static_cast<double>(L.size());
    return record("bce", Tensor::scalar(loss / n),
                  [this, logits, targets, n](const Tensor& g, std::vector<Tensor>& grads) {
                    const Tensor& L = value(logits);
                    Tensor gl(L.rows(), L.cols());
                    for (std::size_t i = 0; i < L.size(); ++i)
                      gl[i] = g.item() * (knowgraph::sigmoid(L[i]) - targets[i]) / n;
                    accumulate(grads, logits, gl);
                  });
  }

  // Escape hatch for composite terms whose Jacobian is cheaper to write by hand
  // than to spell out in primitives. `backprop` receives the upstream gradient
  // and returns one gradient per input, shaped like that input.
  Var custom(const std::string& name, std::vector<Var> inputs, Tensor out,
             std::function<std::vector<Tensor>(const Tensor& grad_out)> backprop) {
    return record(name, std::move(out),
                  [inputs = std::move(inputs), backprop = std::move(backprop)](const Tensor& g,
                                                                                 std::vector<Tensor>& grads) {
                    auto local = backprop(g);
                    for (std::size_t i = 0; i < inputs.size(); ++i) accumulate(grads, inputs[i], local[i]);
                  });
  }

  // Gradients of a scalar node with respect to every registered parameter.
  // Parameters that do not influence `loss` get a zero tensor of their shape.
  Gradients backward(Var loss) const {
    const Tensor& L = value(loss);
    if (L.rows() != 1 || L.cols() != 1) throw ShapeError("backward: loss must be scalar, got " + L.shape());
    std::vector<Tensor> grads(nodes_.size());
    grads[loss.id] = Tensor::scalar(1.0);
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      if (grads[k].empty() || !nodes_[k].backprop) continue;
      nodes_[k].backprop(grads[k], grads);
    }
    Gradients out;
    for (const auto& [name, v] : params_) {
      const Tensor& p = value(v);
      out.emplace(name, grads[v.id].empty() ? Tensor(p.rows(), p.cols()) : std::move(grads[v.id]));
    }
    return out;
  }

 private:
  struct Node {
    Tensor value;
    Backprop backprop;
  };

  Var record(std::string_view op, Tensor value, Backprop backprop) {
    if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite output");
    nodes_.push_back(Node{std::move(value), std::move(backprop)});
    return Var{nodes_.size() - 1};
  }

  static void accumulate(std::vector<Tensor>& grads, Var v, const Tensor& g) {
    Tensor& slot = grads[v.id];
    if (slot.empty()) {
      slot = g;
    } else {
      slot += g;
    }
  }

  [[noreturn]] static void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape() + " and " + b.shape());
  }

  std::vector<Node> nodes_;
  std::map<std::string, Var> params_;
};

}  // namespace knowgraph
