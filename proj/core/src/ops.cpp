#include "avsr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "avsr/error.hpp"

namespace avsr {
namespace {

using detail::Node;
using BackwardFn = std::function<void(Node&)>;

Tensor finish(const char* op, Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
              BackwardFn backward_fn) {
  for (const double v : value) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite output");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    for (const auto& t : inputs) node->parents.push_back(t.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

// Gradient buffer of parent i, or nullptr when that parent is not tracked.
double* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

void require_defined(const Tensor& t, const char* op, const char* what) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": " + what + " is undefined");
}

std::size_t last_dim(const Tensor& t, const char* op) {
  if (t.rank() == 0) throw ShapeError(std::string(op) + ": expected rank >= 1, got scalar");
  return t.shape().back();
}

void require_matrix(const Tensor& t, const char* op, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": " + what + " must be a matrix, got " + shape_str(t.shape()));
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_defined(x, "linear", "x");
  require_matrix(weight, "linear", "weight");
  const std::size_t d_in = last_dim(x, "linear");
  if (weight.dim(0) != d_in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
  }
  const std::size_t d_out = weight.dim(1);
  if (bias.rank() != 1 || bias.dim(0) != d_out) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t rows = x.size() / d_in;
  const double* xv = x.values().data();
  const double* wv = weight.values().data();
  const double* bv = bias.values().data();
  std::vector<double> y(rows * d_out);
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = y.data() + r * d_out;
    std::copy(bv, bv + d_out, yr);
    const double* xr = xv + r * d_in;
    for (std::size_t k = 0; k < d_in; ++k) {
      const double a = xr[k];
      const double* wk = wv + k * d_out;
      for (std::size_t j = 0; j < d_out; ++j) yr[j] += a * wk[j];
    }
  }
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  return finish("linear", std::move(out_shape), std::move(y), {x, weight, bias}, [rows, d_in, d_out](Node& self) {
    const double* dy = self.grad.data();
    const Node& xn = *self.parents[0];
    const Node& wn = *self.parents[1];
    if (double* dx = parent_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* dyr = dy + r * d_out;
        double* dxr = dx + r * d_in;
        for (std::size_t k = 0; k < d_in; ++k) {
          const double* wk = wn.value.data() + k * d_out;
          double acc = 0.0;
          for (std::size_t j = 0; j < d_out; ++j) acc += dyr[j] * wk[j];
          dxr[k] += acc;
        }
      }
    }
    if (double* dw = parent_grad(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* dyr = dy + r * d_out;
        const double* xr = xn.value.data() + r * d_in;
        for (std::size_t k = 0; k < d_in; ++k) {
          const double a = xr[k];
          double* dwk = dw + k * d_out;
          for (std::size_t j = 0; j < d_out; ++j) dwk[j] += a * dyr[j];
        }
      }
    }
    if (double* db = parent_grad(self, 2)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* dyr = dy + r * d_out;
        for (std::size_t j = 0; j < d_out; ++j) db[j] += dyr[j];
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layer_norm", "x");
  const std::size_t d = last_dim(x, "layer_norm");
  if (d == 0) throw ShapeError("layer_norm: last dimension is 0");
  if (!(eps > 0.0)) throw NumericError("layer_norm: eps must be positive");
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d) {
    throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " vs gamma " + shape_str(gamma.shape()) +
                     " / beta " + shape_str(beta.shape()));
  }
  const std::size_t rows = x.size() / d;
  const double* xv = x.values().data();
  const double* g = gamma.values().data();
  const double* b = beta.values().data();
  std::vector<double> y(x.size());
  std::vector<double> x_hat(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mean) * is;
      x_hat[r * d + j] = h;
      y[r * d + j] = g[j] * h + b[j];
    }
  }
  return finish("layer_norm", x.shape(), std::move(y), {x, gamma, beta},
                [rows, d, x_hat = std::move(x_hat), inv_std = std::move(inv_std)](Node& self) {
                  const double* dy = self.grad.data();
                  const double* g = self.parents[1]->value.data();
                  double* dx = parent_grad(self, 0);
                  double* dg = parent_grad(self, 1);
                  double* db = parent_grad(self, 2);
                  const double inv_d = 1.0 / static_cast<double>(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* dyr = dy + r * d;
                    const double* hr = x_hat.data() + r * d;
                    if (dg || db) {
                      for (std::size_t j = 0; j < d; ++j) {
                        if (dg) dg[j] += dyr[j] * hr[j];
                        if (db) db[j] += dyr[j];
                      }
                    }
                    if (dx) {
                      double mean_dh = 0.0;
                      double mean_dh_h = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        const double dh = dyr[j] * g[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                      }
                      mean_dh *= inv_d;
                      mean_dh_h *= inv_d;
                      double* dxr = dx + r * d;
                      for (std::size_t j = 0; j < d; ++j) {
                        dxr[j] += inv_std[r] * (dyr[j] * g[j] - mean_dh - hr[j] * mean_dh_h);
                      }
                    }
                  }
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add", "a");
  require_defined(b, "add", "b");
  if (a.shape() != b.shape()) throw ShapeError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  std::vector<double> y(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return finish("add", a.shape(), std::move(y), {a, b}, [](Node& self) {
    const std::size_t n = self.grad.size();
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* dp = parent_grad(self, p)) {
        for (std::size_t i = 0; i < n; ++i) dp[i] += self.grad[i];
      }
    }
  });
}

Tensor mul_scalar(const Tensor& x, double c) {
  require_defined(x, "mul_scalar", "x");
  std::vector<double> y(x.values().begin(), x.values().end());
  for (auto& v : y) v *= c;
  return finish("mul_scalar", x.shape(), std::move(y), {x}, [c](Node& self) {
    if (double* dx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += c * self.grad[i];
    }
  });
}

Tensor tanh_gate(const Tensor& x, const Tensor& gate) {
  require_defined(x, "tanh_gate", "x");
  if (gate.size() != 1) throw ShapeError("tanh_gate: gate must be scalar, got " + shape_str(gate.shape()));
  const double t = std::tanh(gate.item());
  std::vector<double> y(x.values().begin(), x.values().end());
  for (auto& v : y) v *= t;
  return finish("tanh_gate", x.shape(), std::move(y), {x, gate}, [t](Node& self) {
    const std::size_t n = self.grad.size();
    if (double* dx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) dx[i] += t * self.grad[i];
    }
    if (double* dg = parent_grad(self, 1)) {
      const double* xv = self.parents[0]->value.data();
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += self.grad[i] * xv[i];
      dg[0] += (1.0 - t * t) * acc;
    }
  });
}

Tensor gelu(const Tensor& x) {
  require_defined(x, "gelu", "x");
  std::vector<double> y(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
  return finish("gelu", x.shape(), std::move(y), {x}, [](Node& self) {
    if (double* dx = parent_grad(self, 0)) {
      const double* xv = self.parents[0]->value.data();
      const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv[i] * xv[i]);
        dx[i] += self.grad[i] * (cdf + xv[i] * pdf);
      }
    }
  });
}

Tensor softmax(const Tensor& x) {
  require_defined(x, "softmax", "x");
  const std::size_t d = last_dim(x, "softmax");
  if (d == 0) throw ShapeError("softmax: last dimension is 0");
  const std::size_t rows = x.size() / d;
  std::vector<double> y(x.size());
  const double* xv = x.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv + r * d;
    double* yr = y.data() + r * d;
    const double mx = *std::max_element(xr, xr + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < d; ++j) yr[j] /= z;
  }
  return finish("softmax", x.shape(), std::move(y), {x}, [rows, d](Node& self) {
    if (double* dx = parent_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = self.value.data() + r * d;
        const double* dyr = self.grad.data() + r * d;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += dyr[j] * yr[j];
        for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += yr[j] * (dyr[j] - dot);
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum", "x");
  double s = 0.0;
  for (const double v : x.values()) s += v;
  return finish("sum", {}, {s}, {x}, [](Node& self) {
    if (double* dx = parent_grad(self, 0)) {
      const double g = self.grad[0];
      for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) dx[i] += g;
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const TokenId> ids) {
  require_matrix(table, "embedding", "table");
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<TokenId> rows(ids.begin(), ids.end());
  std::vector<double> y(rows.size() * d);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t] < 0 || static_cast<std::size_t>(rows[t]) >= vocab) {
      throw ShapeError("embedding: token id " + std::to_string(rows[t]) + " outside table " +
                       shape_str(table.shape()));
    }
    const double* src = table.values().data() + static_cast<std::size_t>(rows[t]) * d;
    std::copy(src, src + d, y.begin() + static_cast<std::ptrdiff_t>(t * d));
  }
  const std::size_t n = rows.size();
  return finish("embedding", {n, d}, std::move(y), {table}, [rows = std::move(rows), d](Node& self) {
    if (double* dt = parent_grad(self, 0)) {
      for (std::size_t t = 0; t < rows.size(); ++t) {
        double* dst = dt + static_cast<std::size_t>(rows[t]) * d;
        const double* g = self.grad.data() + t * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
      }
    }
  });
}

Tensor attention_heads(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads, bool causal) {
  require_matrix(q, "attention", "q");
  require_matrix(k, "attention", "k");
  require_matrix(v, "attention", "v");
  const std::size_t tq = q.dim(0);
  const std::size_t tk = k.dim(0);
  const std::size_t d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != tk) {
    throw ShapeError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                     shape_str(v.shape()));
  }
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("attention: model width " + std::to_string(d) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  if (tq == 0 || tk == 0) throw ShapeError("attention: empty sequence");
  if (causal && tq != tk) {
    throw ShapeError("attention: causal mask needs equal lengths, got " + std::to_string(tq) + " and " +
                     std::to_string(tk));
  }
  const std::size_t dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* qv = q.values().data();
  const double* kv = k.values().data();
  const double* vv = v.values().data();
  std::vector<double> probs(n_heads * tq * tk, 0.0);
  std::vector<double> out(tq * d, 0.0);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < tq; ++i) {
      double* p = probs.data() + (h * tq + i) * tk;
      const std::size_t visible = causal ? i + 1 : tk;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < visible; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qv[i * d + off + c] * kv[j * d + off + c];
        p[j] = s * scale;
        mx = std::max(mx, p[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < visible; ++j) z += (p[j] = std::exp(p[j] - mx));
      for (std::size_t j = 0; j < visible; ++j) p[j] /= z;
      double* o = out.data() + i * d + off;
      for (std::size_t j = 0; j < visible; ++j) {
        const double w = p[j];
        const double* vr = vv + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) o[c] += w * vr[c];
      }
    }
  }
  return finish(
      "attention", {tq, d}, std::move(out), {q, k, v},
      [tq, tk, d, dh, n_heads, causal, scale, probs = std::move(probs)](Node& self) {
        const double* dout = self.grad.data();
        const double* qv = self.parents[0]->value.data();
        const double* kv = self.parents[1]->value.data();
        const double* vv = self.parents[2]->value.data();
        double* dq = parent_grad(self, 0);
        double* dk = parent_grad(self, 1);
        double* dv = parent_grad(self, 2);
        std::vector<double> dscore(tk);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t off = h * dh;
          for (std::size_t i = 0; i < tq; ++i) {
            const double* p = probs.data() + (h * tq + i) * tk;
            const double* go = dout + i * d + off;
            const std::size_t visible = causal ? i + 1 : tk;
            double dot = 0.0;
            for (std::size_t j = 0; j < visible; ++j) {
              double dp = 0.0;
              const double* vr = vv + j * d + off;
              for (std::size_t c = 0; c < dh; ++c) dp += go[c] * vr[c];
              dscore[j] = dp;
              dot += dp * p[j];
              if (dv) {
                double* dvr = dv + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) dvr[c] += p[j] * go[c];
              }
            }
            for (std::size_t j = 0; j < visible; ++j) {
              const double ds = p[j] * (dscore[j] - dot) * scale;
              if (dq) {
                const double* kr = kv + j * d + off;
                double* dqr = dq + i * d + off;
                for (std::size_t c = 0; c < dh; ++c) dqr[c] += ds * kr[c];
              }
              if (dk) {
                const double* qr = qv + i * d + off;
                double* dkr = dk + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) dkr[c] += ds * qr[c];
              }
            }
          }
        }
      });
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const AttentionWeights& w, std::size_t n_heads,
                            bool causal) {
  require_matrix(q_in, "multi_head_attention", "q_in");
  require_matrix(kv_in, "multi_head_attention", "kv_in");
  const std::size_t d = q_in.dim(1);
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("multi_head_attention: model width " + std::to_string(d) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  const Tensor q = linear(q_in, w.w_q, w.b_q);
  const Tensor k = linear(kv_in, w.w_k, w.b_k);
  const Tensor v = linear(kv_in, w.w_v, w.b_v);
  return linear(attention_heads(q, k, v, n_heads, causal), w.w_o, w.b_o);
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const TokenId> targets, TokenId ignore_id) {
  require_matrix(logits, "softmax_cross_entropy", "logits");
  const std::size_t rows = logits.dim(0);
  const std::size_t vocab = logits.dim(1);
  if (targets.size() != rows) {
    throw ShapeError("softmax_cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const double* lv = logits.values().data();
  std::vector<double> probs(rows * vocab);
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  double total = 0.0;
  std::size_t counted = 0;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* lr = lv + r * vocab;
    double* pr = probs.data() + r * vocab;
    const std::size_t best = static_cast<std::size_t>(std::max_element(lr, lr + vocab) - lr);
    const double mx = lr[best];
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += (pr[j] = std::exp(lr[j] - mx));
    for (std::size_t j = 0; j < vocab; ++j) pr[j] /= z;
    if (tgt[r] == ignore_id) continue;
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= vocab) {
      throw ShapeError("softmax_cross_entropy: target " + std::to_string(tgt[r]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    total += -(lr[tgt[r]] - mx - std::log(z));
    ++counted;
    if (best == static_cast<std::size_t>(tgt[r])) ++correct;
  }
  if (counted == 0) throw NumericError("softmax_cross_entropy: every position is ignored");
  const double inv_n = 1.0 / static_cast<double>(counted);
  Tensor loss = finish("softmax_cross_entropy", {}, {total * inv_n}, {logits},
                       [rows, vocab, inv_n, ignore_id, tgt = std::move(tgt), probs = std::move(probs)](Node& self) {
                         double* dl = parent_grad(self, 0);
                         if (!dl) return;
                         const double g = self.grad[0] * inv_n;
                         for (std::size_t r = 0; r < rows; ++r) {
                           if (tgt[r] == ignore_id) continue;
                           const double* pr = probs.data() + r * vocab;
                           double* dr = dl + r * vocab;
                           for (std::size_t j = 0; j < vocab; ++j) dr[j] += g * pr[j];
                           dr[tgt[r]] -= g;
                         }
                       });
  return {std::move(loss), correct, counted};
}

}  // namespace avsr
