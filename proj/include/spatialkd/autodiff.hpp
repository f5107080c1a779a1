#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "spatialkd/common.hpp"
#include "spatialkd/tensor.hpp"

namespace skd::ad {

// Reverse-mode autodiff over dense double tensors.
//
// A Graph is a tape: every operation appends a Node, so creation order is a
// valid topological order and backward() is a single reverse sweep. Nodes are
// owned by the graph arena (std::deque keeps addresses stable); user code
// holds raw Node* handles that die with the graph.
//
// Double precision is used throughout so analytic gradients can be checked
// against central finite differences to tight tolerances.
struct Node {
  Tensor value;
  Tensor grad;  // allocated by backward() for reachable nodes
  std::vector<Node*> parents;
  std::function<void(Node&)> backprop;  // accumulates node.grad into parents
  bool requires_grad = false;
  bool reachable = false;  // scratch flag used by backward()
};

class Graph {
 public:
  Node* leaf(Tensor t, bool requires_grad = false) {
    Node* n = alloc();
    n->value = std::move(t);
    n->requires_grad = requires_grad;
    return n;
  }

  Node* constant(Tensor t) { return leaf(std::move(t), false); }

  // --- elementwise -------------------------------------------------------

  Node* add(Node* a, Node* b) {
    check_same(a, b, "add");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    return make(std::move(out), {a, b}, [](Node& n) {
      Node* a = n.parents[0];
      Node* b = n.parents[1];
      if (a->requires_grad)
        for (int64_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i];
      if (b->requires_grad)
        for (int64_t i = 0; i < n.grad.numel(); ++i) b->grad[i] += n.grad[i];
    });
  }

  Node* sub(Node* a, Node* b) {
    check_same(a, b, "sub");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    return make(std::move(out), {a, b}, [](Node& n) {
      Node* a = n.parents[0];
      Node* b = n.parents[1];
      if (a->requires_grad)
        for (int64_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i];
      if (b->requires_grad)
        for (int64_t i = 0; i < n.grad.numel(); ++i) b->grad[i] -= n.grad[i];
    });
  }

  Node* mul(Node* a, Node* b) {
    check_same(a, b, "mul");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return make(std::move(out), {a, b}, [](Node& n) {
      Node* a = n.parents[0];
      Node* b = n.parents[1];
      if (a->requires_grad)
        for (int64_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i] * b->value[i];
      if (b->requires_grad)
        for (int64_t i = 0; i < n.grad.numel(); ++i) b->grad[i] += n.grad[i] * a->value[i];
    });
  }

  Node* scale(Node* a, double c) {
    Tensor out = a->value;
    for (auto& v : out.data) v *= c;
    return make(std::move(out), {a}, [c](Node& n) {
      Node* a = n.parents[0];
      if (a->requires_grad)
        for (int64_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i] * c;
    });
  }

  Node* add_scalar(Node* a, double c) {
    Tensor out = a->value;
    for (auto& v : out.data) v += c;
    return make(std::move(out), {a}, [](Node& n) {
      Node* a = n.parents[0];
      if (a->requires_grad)
        for (int64_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i];
    });
  }

  Node* neg(Node* a) { return scale(a, -1.0); }

  Node* exp_(Node* a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = std::exp(v);
    return make(std::move(out), {a}, [](Node& n) {
      Node* a = n.parents[0];
      if (a->requires_grad)
        for (int64_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i] * n.value[i];
    });
  }

  Node* log_(Node* a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = std::log(v);
    return make(std::move(out), {a}, [](Node& n) {
      Node* a = n.parents[0];
      if (a->requires_grad)
        for (int64_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i] / a->value[i];
    });
  }

  Node* tanh_(Node* a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = std::tanh(v);
    return make(std::move(out), {a}, [](Node& n) {
      Node* a = n.parents[0];
      if (a->requires_grad)
        for (int64_t i = 0; i < n.grad.numel(); ++i)
          a->grad[i] += n.grad[i] * (1.0 - n.value[i] * n.value[i]);
    });
  }

  Node* sigmoid_(Node* a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return make(std::move(out), {a}, [](Node& n) {
      Node* a = n.parents[0];
      if (a->requires_grad)
        for (int64_t i = 0; i < n.grad.numel(); ++i)
          a->grad[i] += n.grad[i] * n.value[i] * (1.0 - n.value[i]);
    });
  }

  // Exact GELU: x * Phi(x).
  Node* gelu(Node* a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = v * 0.5 * (1.0 + std::erf(v / kSqrt2));
    return make(std::move(out), {a}, [](Node& n) {
      Node* a = n.parents[0];
      if (!a->requires_grad) return;
      for (int64_t i = 0; i < n.grad.numel(); ++i) {
        double x = a->value[i];
        double phi_cdf = 0.5 * (1.0 + std::erf(x / kSqrt2));
        double phi_pdf = std::exp(-0.5 * x * x) * kInvSqrt2Pi;
        a->grad[i] += n.grad[i] * (phi_cdf + x * phi_pdf);
      }
    });
  }

  // Elementwise sqrt; inputs must be positive.
  Node* sqrt_(Node* a) {
    Tensor out = a->value;
    for (auto& v : out.data) {
      check(v > 0.0, "sqrt_: non-positive input ", v);
      v = std::sqrt(v);
    }
    return make(std::move(out), {a}, [](Node& n) {
      Node* a = n.parents[0];
      if (a->requires_grad)
        for (int64_t i = 0; i < n.grad.numel(); ++i)
          a->grad[i] += n.grad[i] * 0.5 / n.value[i];
    });
  }

  Node* recip(Node* a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = 1.0 / v;
    return make(std::move(out), {a}, [](Node& n) {
      Node* a = n.parents[0];
      if (a->requires_grad)
        for (int64_t i = 0; i < n.grad.numel(); ++i)
          a->grad[i] -= n.grad[i] * n.value[i] * n.value[i];
    });
  }

  // max(a, c) elementwise; subgradient 1 at a == c.
  Node* clamp_min(Node* a, double c) {
    Tensor out = a->value;
    for (auto& v : out.data) v = std::max(v, c);
    return make(std::move(out), {a}, [c](Node& n) {
      Node* a = n.parents[0];
      if (!a->requires_grad) return;
      for (int64_t i = 0; i < n.grad.numel(); ++i)
        if (a->value[i] >= c) a->grad[i] += n.grad[i];
    });
  }

  // out = a^p with constant exponent p >= 1 (used by the focal modulator).
  Node* pow_const(Node* a, double p) {
    check(p >= 1.0 || p == 0.0, "pow_const: exponent ", p, " would be singular at 0");
    Tensor out = a->value;
    for (auto& v : out.data) v = std::pow(v, p);
    return make(std::move(out), {a}, [p](Node& n) {
      Node* a = n.parents[0];
      if (!a->requires_grad) return;
      for (int64_t i = 0; i < n.grad.numel(); ++i) {
        double d = (p == 0.0) ? 0.0 : p * std::pow(a->value[i], p - 1.0);
        a->grad[i] += n.grad[i] * d;
      }
    });
  }

  // --- matrix ------------------------------------------------------------

  Node* matmul(Node* a, Node* b) {
    check(a->value.shape.size() == 2 && b->value.shape.size() == 2 &&
              a->value.cols() == b->value.rows(),
          "matmul: shape mismatch ", shape_str(a->value.shape), " x ", shape_str(b->value.shape));
    const int n = a->value.rows(), k = a->value.cols(), m = b->value.cols();
    Tensor out({n, m});
    for (int i = 0; i < n; ++i)
      for (int l = 0; l < k; ++l) {
        double av = a->value.at(i, l);
        if (av == 0.0) continue;
        for (int j = 0; j < m; ++j) out.at(i, j) += av * b->value.at(l, j);
      }
    return make(std::move(out), {a, b}, [n, k, m](Node& nd) {
      Node* a = nd.parents[0];
      Node* b = nd.parents[1];
      if (a->requires_grad) {  // dA += dC * B^T
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j) {
            double g = nd.grad.at(i, j);
            if (g == 0.0) continue;
            for (int l = 0; l < k; ++l) a->grad.at(i, l) += g * b->value.at(l, j);
          }
      }
      if (b->requires_grad) {  // dB += A^T * dC
        for (int i = 0; i < n; ++i)
          for (int l = 0; l < k; ++l) {
            double av = a->value.at(i, l);
            if (av == 0.0) continue;
            for (int j = 0; j < m; ++j) b->grad.at(l, j) += av * nd.grad.at(i, j);
          }
      }
    });
  }

  Node* transpose(Node* a) {
    const int n = a->value.rows(), m = a->value.cols();
    Tensor out({m, n});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) out.at(j, i) = a->value.at(i, j);
    return make(std::move(out), {a}, [n, m](Node& nd) {
      Node* a = nd.parents[0];
      if (!a->requires_grad) return;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) a->grad.at(i, j) += nd.grad.at(j, i);
    });
  }

  // [n,m] + [1,m] broadcast over rows.
  Node* add_rowvec(Node* a, Node* bias) {
    check(a->value.shape.size() == 2 && bias->value.shape.size() == 2 &&
              bias->value.rows() == 1 && bias->value.cols() == a->value.cols(),
          "add_rowvec: shape mismatch ", shape_str(a->value.shape), " + ",
          shape_str(bias->value.shape));
    const int n = a->value.rows(), m = a->value.cols();
    Tensor out = a->value;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) out.at(i, j) += bias->value.at(0, j);
    return make(std::move(out), {a, bias}, [n, m](Node& nd) {
      Node* a = nd.parents[0];
      Node* b = nd.parents[1];
      if (a->requires_grad)
        for (int64_t i = 0; i < nd.grad.numel(); ++i) a->grad[i] += nd.grad[i];
      if (b->requires_grad)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j) b->grad.at(0, j) += nd.grad.at(i, j);
    });
  }

  Node* gather_rows(Node* table, std::vector<int> ids) {
    check(table->value.shape.size() == 2, "gather_rows: table must be 2-D");
    const int m = table->value.cols();
    const int n = static_cast<int>(ids.size());
    Tensor out({n, m});
    for (int i = 0; i < n; ++i) {
      check(ids[i] >= 0 && ids[i] < table->value.rows(), "gather_rows: id ", ids[i],
            " out of range [0,", table->value.rows(), ")");
      for (int j = 0; j < m; ++j) out.at(i, j) = table->value.at(ids[i], j);
    }
    return make(std::move(out), {table}, [ids = std::move(ids), n, m](Node& nd) {
      Node* t = nd.parents[0];
      if (!t->requires_grad) return;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) t->grad.at(ids[i], j) += nd.grad.at(i, j);
    });
  }

  Node* slice_rows(Node* a, int start, int len) {
    check(a->value.shape.size() == 2 && start >= 0 && len >= 0 &&
              start + len <= a->value.rows(),
          "slice_rows: bad range [", start, ",", start + len, ") for ",
          shape_str(a->value.shape));
    const int m = a->value.cols();
    Tensor out({len, m});
    for (int i = 0; i < len; ++i)
      for (int j = 0; j < m; ++j) out.at(i, j) = a->value.at(start + i, j);
    return make(std::move(out), {a}, [start, len, m](Node& nd) {
      Node* a = nd.parents[0];
      if (!a->requires_grad) return;
      for (int i = 0; i < len; ++i)
        for (int j = 0; j < m; ++j) a->grad.at(start + i, j) += nd.grad.at(i, j);
    });
  }

  Node* slice_cols(Node* a, int start, int len) {
    check(a->value.shape.size() == 2 && start >= 0 && len >= 0 &&
              start + len <= a->value.cols(),
          "slice_cols: bad range [", start, ",", start + len, ") for ",
          shape_str(a->value.shape));
    const int n = a->value.rows();
    Tensor out({n, len});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < len; ++j) out.at(i, j) = a->value.at(i, start + j);
    return make(std::move(out), {a}, [start, len, n](Node& nd) {
      Node* a = nd.parents[0];
      if (!a->requires_grad) return;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < len; ++j) a->grad.at(i, start + j) += nd.grad.at(i, j);
    });
  }

  Node* concat_rows(const std::vector<Node*>& parts) {
    check(!parts.empty(), "concat_rows: empty part list");
    const int m = parts[0]->value.cols();
    int n = 0;
    for (Node* p : parts) {
      check(p->value.shape.size() == 2 && p->value.cols() == m,
            "concat_rows: column mismatch");
      n += p->value.rows();
    }
    Tensor out({n, m});
    int r = 0;
    for (Node* p : parts) {
      for (int i = 0; i < p->value.rows(); ++i, ++r)
        for (int j = 0; j < m; ++j) out.at(r, j) = p->value.at(i, j);
    }
    return make(std::move(out), parts, [m](Node& nd) {
      int r = 0;
      for (Node* p : nd.parents) {
        const int rows = p->value.rows();
        if (p->requires_grad) {
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < m; ++j) p->grad.at(i, j) += nd.grad.at(r + i, j);
        }
        r += rows;
      }
    });
  }

  Node* concat_cols(const std::vector<Node*>& parts) {
    check(!parts.empty(), "concat_cols: empty part list");
    const int n = parts[0]->value.rows();
    int m = 0;
    for (Node* p : parts) {
      check(p->value.shape.size() == 2 && p->value.rows() == n, "concat_cols: row mismatch");
      m += p->value.cols();
    }
    Tensor out({n, m});
    int c = 0;
    for (Node* p : parts) {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < p->value.cols(); ++j) out.at(i, c + j) = p->value.at(i, j);
      c += p->value.cols();
    }
    return make(std::move(out), parts, [n](Node& nd) {
      int c = 0;
      for (Node* p : nd.parents) {
        const int cols = p->value.cols();
        if (p->requires_grad) {
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < cols; ++j) p->grad.at(i, j) += nd.grad.at(i, c + j);
        }
        c += cols;
      }
    });
  }

  Node* reshape(Node* a, std::vector<int> shape) {
    check(Tensor::numel_of(shape) == a->value.numel(), "reshape: numel mismatch ",
          shape_str(a->value.shape), " -> ", shape_str(shape));
    Tensor out;
    out.shape = std::move(shape);
    out.data = a->value.data;
    return make(std::move(out), {a}, [](Node& nd) {
      Node* a = nd.parents[0];
      if (!a->requires_grad) return;
      for (int64_t i = 0; i < nd.grad.numel(); ++i) a->grad[i] += nd.grad[i];
    });
  }

  // --- reductions ---------------------------------------------------------

  Node* mean_rows(Node* a) {
    const int n = a->value.rows(), m = a->value.cols();
    check(n > 0, "mean_rows: empty input");
    Tensor out({1, m});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) out.at(0, j) += a->value.at(i, j);
    for (int j = 0; j < m; ++j) out.at(0, j) /= n;
    return make(std::move(out), {a}, [n, m](Node& nd) {
      Node* a = nd.parents[0];
      if (!a->requires_grad) return;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) a->grad.at(i, j) += nd.grad.at(0, j) / n;
    });
  }

  Node* sum_all(Node* a) {
    Tensor out({1, 1});
    out[0] = a->value.sum();
    return make(std::move(out), {a}, [](Node& nd) {
      Node* a = nd.parents[0];
      if (!a->requires_grad) return;
      for (int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += nd.grad[0];
    });
  }

  Node* mean_all(Node* a) {
    const double n = static_cast<double>(a->value.numel());
    check(n > 0, "mean_all: empty input");
    Tensor out({1, 1});
    out[0] = a->value.sum() / n;
    return make(std::move(out), {a}, [n](Node& nd) {
      Node* a = nd.parents[0];
      if (!a->requires_grad) return;
      for (int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += nd.grad[0] / n;
    });
  }

  // out[i,0] = a[i, cols[i]]
  Node* pick(Node* a, std::vector<int> cols) {
    const int n = a->value.rows();
    check(static_cast<int>(cols.size()) == n, "pick: need one column per row");
    Tensor out({n, 1});
    for (int i = 0; i < n; ++i) {
      check(cols[i] >= 0 && cols[i] < a->value.cols(), "pick: column ", cols[i], " out of range");
      out.at(i, 0) = a->value.at(i, cols[i]);
    }
    return make(std::move(out), {a}, [cols = std::move(cols), n](Node& nd) {
      Node* a = nd.parents[0];
      if (!a->requires_grad) return;
      for (int i = 0; i < n; ++i) a->grad.at(i, cols[i]) += nd.grad.at(i, 0);
    });
  }

  // --- row-wise normalizations ---------------------------------------------

  Node* softmax_rows(Node* a) {
    const int n = a->value.rows(), m = a->value.cols();
    Tensor out({n, m});
    for (int i = 0; i < n; ++i) {
      double mx = a->value.at(i, 0);
      for (int j = 1; j < m; ++j) mx = std::max(mx, a->value.at(i, j));
      double z = 0.0;
      for (int j = 0; j < m; ++j) {
        double e = std::exp(a->value.at(i, j) - mx);
        out.at(i, j) = e;
        z += e;
      }
      for (int j = 0; j < m; ++j) out.at(i, j) /= z;
    }
    return make(std::move(out), {a}, [n, m](Node& nd) {
      Node* a = nd.parents[0];
      if (!a->requires_grad) return;
      for (int i = 0; i < n; ++i) {
        double dot = 0.0;
        for (int j = 0; j < m; ++j) dot += nd.grad.at(i, j) * nd.value.at(i, j);
        for (int j = 0; j < m; ++j)
          a->grad.at(i, j) += nd.value.at(i, j) * (nd.grad.at(i, j) - dot);
      }
    });
  }

  Node* log_softmax_rows(Node* a) {
    const int n = a->value.rows(), m = a->value.cols();
    Tensor out({n, m});
    for (int i = 0; i < n; ++i) {
      double mx = a->value.at(i, 0);
      for (int j = 1; j < m; ++j) mx = std::max(mx, a->value.at(i, j));
      double z = 0.0;
      for (int j = 0; j < m; ++j) z += std::exp(a->value.at(i, j) - mx);
      double lz = mx + std::log(z);
      for (int j = 0; j < m; ++j) out.at(i, j) = a->value.at(i, j) - lz;
    }
    return make(std::move(out), {a}, [n, m](Node& nd) {
      Node* a = nd.parents[0];
      if (!a->requires_grad) return;
      for (int i = 0; i < n; ++i) {
        double gsum = 0.0;
        for (int j = 0; j < m; ++j) gsum += nd.grad.at(i, j);
        for (int j = 0; j < m; ++j)
          a->grad.at(i, j) += nd.grad.at(i, j) - std::exp(nd.value.at(i, j)) * gsum;
      }
    });
  }

  // Row-wise layer norm with learnable gain/bias: y = gamma * (x-mu)/s + beta.
  Node* layer_norm(Node* x, Node* gamma, Node* beta, double eps = 1e-5) {
    const int n = x->value.rows(), m = x->value.cols();
    check(gamma->value.rows() == 1 && gamma->value.cols() == m && beta->value.rows() == 1 &&
              beta->value.cols() == m,
          "layer_norm: gain/bias must be [1,", m, "]");
    Tensor out({n, m});
    std::vector<double> inv_s(n), mu(n);
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < m; ++j) s += x->value.at(i, j);
      mu[i] = s / m;
      double v = 0.0;
      for (int j = 0; j < m; ++j) {
        double d = x->value.at(i, j) - mu[i];
        v += d * d;
      }
      inv_s[i] = 1.0 / std::sqrt(v / m + eps);
      for (int j = 0; j < m; ++j)
        out.at(i, j) =
            gamma->value.at(0, j) * (x->value.at(i, j) - mu[i]) * inv_s[i] + beta->value.at(0, j);
    }
    return make(std::move(out), {x, gamma, beta},
                [n, m, inv_s = std::move(inv_s), mu = std::move(mu)](Node& nd) {
      Node* x = nd.parents[0];
      Node* gamma = nd.parents[1];
      Node* beta = nd.parents[2];
      for (int i = 0; i < n; ++i) {
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        // First pass: gradients wrt normalized activations.
        for (int j = 0; j < m; ++j) {
          double xhat = (x->value.at(i, j) - mu[i]) * inv_s[i];
          double dxhat = nd.grad.at(i, j) * gamma->value.at(0, j);
          mean_dxhat += dxhat;
          mean_dxhat_xhat += dxhat * xhat;
          if (gamma->requires_grad) gamma->grad.at(0, j) += nd.grad.at(i, j) * xhat;
          if (beta->requires_grad) beta->grad.at(0, j) += nd.grad.at(i, j);
        }
        mean_dxhat /= m;
        mean_dxhat_xhat /= m;
        if (x->requires_grad) {
          for (int j = 0; j < m; ++j) {
            double xhat = (x->value.at(i, j) - mu[i]) * inv_s[i];
            double dxhat = nd.grad.at(i, j) * gamma->value.at(0, j);
            x->grad.at(i, j) += inv_s[i] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
          }
        }
      }
    });
  }

  // Fills strictly-upper-triangular cells (j > i) with `neg`; used on
  // attention score matrices to enforce causal visibility.
  Node* causal_masked_fill(Node* scores, double neg = -1e30) {
    const int n = scores->value.rows();
    check(scores->value.cols() == n, "causal_masked_fill: scores must be square");
    Tensor out = scores->value;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) out.at(i, j) = neg;
    return make(std::move(out), {scores}, [n](Node& nd) {
      Node* s = nd.parents[0];
      if (!s->requires_grad) return;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) s->grad.at(i, j) += nd.grad.at(i, j);
    });
  }

  // --- fused loss helpers ---------------------------------------------------

  // Mean over rows of KL(t || exp(log_probs)) with constant teacher rows t.
  // Entries with t == 0 contribute 0 (0*log 0 convention).
  Node* kl_const_rows(const Tensor& teacher_probs, Node* log_probs) {
    check(teacher_probs.shape == log_probs->value.shape, "kl_const_rows: shape mismatch ",
          shape_str(teacher_probs.shape), " vs ", shape_str(log_probs->value.shape));
    const int n = log_probs->value.rows(), m = log_probs->value.cols();
    check(n > 0, "kl_const_rows: empty input");
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        double t = teacher_probs.at(i, j);
        if (t > 0.0) acc += t * (std::log(t) - log_probs->value.at(i, j));
      }
    Tensor out({1, 1});
    out[0] = acc / n;
    return make(std::move(out), {log_probs}, [teacher_probs, n, m](Node& nd) {
      Node* lp = nd.parents[0];
      if (!lp->requires_grad) return;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
          lp->grad.at(i, j) -= nd.grad[0] * teacher_probs.at(i, j) / n;
    });
  }

  // sum over elements of (a - t)^2 with constant target t.
  Node* sq_diff_sum(Node* a, const Tensor& target) {
    check(a->value.shape == target.shape, "sq_diff_sum: shape mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < a->value.numel(); ++i) {
      double d = a->value[i] - target[i];
      acc += d * d;
    }
    Tensor out({1, 1});
    out[0] = acc;
    return make(std::move(out), {a}, [target](Node& nd) {
      Node* a = nd.parents[0];
      if (!a->requires_grad) return;
      for (int64_t i = 0; i < a->grad.numel(); ++i)
        a->grad[i] += nd.grad[0] * 2.0 * (a->value[i] - target[i]);
    });
  }

  // mean over elements of |a - t| with constant target t. sign(0) := 0.
  Node* l1_mean(Node* a, const Tensor& target) {
    check(a->value.shape == target.shape, "l1_mean: shape mismatch");
    const double n = static_cast<double>(a->value.numel());
    check(n > 0, "l1_mean: empty input");
    double acc = 0.0;
    for (int64_t i = 0; i < a->value.numel(); ++i) acc += std::abs(a->value[i] - target[i]);
    Tensor out({1, 1});
    out[0] = acc / n;
    return make(std::move(out), {a}, [target, n](Node& nd) {
      Node* a = nd.parents[0];
      if (!a->requires_grad) return;
      for (int64_t i = 0; i < a->grad.numel(); ++i) {
        double d = a->value[i] - target[i];
        double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        a->grad[i] += nd.grad[0] * s / n;
      }
    });
  }

  // --- backward -------------------------------------------------------------

  // Root must be a scalar [1,1]. Seeds d(root)/d(root) = 1 and sweeps the tape
  // in reverse creation order. Gradients of unreachable or non-differentiable
  // nodes stay zero.
  void backward(Node* root) {
    check(root->value.numel() == 1, "backward: root must be scalar, got ",
          shape_str(root->value.shape));
    for (auto& n : arena_) n.reachable = false;
    mark_reachable(root);
    for (auto& n : arena_) {
      if (n.reachable && n.requires_grad && n.grad.numel() != n.value.numel())
        n.grad = Tensor(n.value.shape);
    }
    root->grad = Tensor({1, 1});
    root->grad[0] = 1.0;
    for (auto it = arena_.rbegin(); it != arena_.rend(); ++it) {
      if (it->reachable && it->requires_grad && it->backprop) it->backprop(*it);
    }
  }

  size_t size() const { return arena_.size(); }

 private:
  Node* alloc() {
    arena_.emplace_back();
    return &arena_.back();
  }

  Node* make(Tensor value, std::vector<Node*> parents, std::function<void(Node&)> bp) {
    Node* n = alloc();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (Node* p : n->parents) n->requires_grad |= p->requires_grad;
    if (n->requires_grad) n->backprop = std::move(bp);
    return n;
  }

  void mark_reachable(Node* root) {
    std::vector<Node*> stack{root};
    root->reachable = true;
    while (!stack.empty()) {
      Node* n = stack.back();
      stack.pop_back();
      for (Node* p : n->parents) {
        if (!p->reachable) {
          p->reachable = true;
          stack.push_back(p);
        }
      }
    }
  }

  static void check_same(Node* a, Node* b, const char* op) {
    check(a->value.shape == b->value.shape, op, ": shape mismatch ", shape_str(a->value.shape),
          " vs ", shape_str(b->value.shape));
  }

  static constexpr double kSqrt2 = 1.4142135623730951;
  static constexpr double kInvSqrt2Pi = 0.3989422804014327;

  std::deque<Node> arena_;
};

}  // namespace skd::ad
