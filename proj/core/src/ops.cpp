// SPDX-License-Identifier: Apache-2.0
#include "tckd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace tckd::ops {

namespace {

using NodePtr = std::shared_ptr<detail::TensorNode>;

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) mismatch(op, a, b);
}

void accumulate(const NodePtr& n, std::span<const double> g) {
  if (!n->requires_grad) return;
  auto dst = n->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

// Elementwise unary op with derivative computed from (input, output).
template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  Tensor out = Tensor::zeros(x.shape());
  auto xs = x.data();
  auto os = out.mutable_data();
  for (std::size_t i = 0; i < xs.size(); ++i) os[i] = f(xs[i]);
  if (needs_record({&x})) {
    NodePtr xn = x.node(), on = out.node();
    record(out, [xn, on, df] {
      auto gx = xn->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i] * df(xn->data[i], on->data[i]);
    });
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) mismatch("matmul", a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out = Tensor::zeros({n, m});
  auto A = a.data();
  auto B = b.data();
  auto C = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &B[p * m];
      double* crow = &C[i * m];
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
  if (needs_record({&a, &b})) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    record(out, [an, bn, on, n, k, m] {
      const auto& G = on->grad;
      if (an->requires_grad) {
        auto GA = an->grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += G[i * m + j] * bn->data[p * m + j];
            GA[i * k + p] += acc;
          }
      }
      if (bn->requires_grad) {
        auto GB = bn->grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = an->data[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) GB[p * m + j] += aip * G[i * m + j];
          }
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] + b.data()[i];
  if (needs_record({&a, &b})) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    record(out, [an, bn, on] {
      accumulate(an, on->grad);
      accumulate(bn, on->grad);
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] - b.data()[i];
  if (needs_record({&a, &b})) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    record(out, [an, bn, on] {
      accumulate(an, on->grad);
      if (bn->requires_grad) {
        auto g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= on->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] * b.data()[i];
  if (needs_record({&a, &b})) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    record(out, [an, bn, on] {
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto ga = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto gb = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->data[i];
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor rsub(double s, const Tensor& a) {
  return unary(a, [s](double x) { return s - x; }, [](double, double) { return -1.0; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.numel() != x.cols()) mismatch("add_bias", x, bias);
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) o[i * m + j] = x.data()[i * m + j] + bias.data()[j];
  if (needs_record({&x, &bias})) {
    NodePtr xn = x.node(), bn = bias.node(), on = out.node();
    record(out, [xn, bn, on, n, m] {
      accumulate(xn, on->grad);
      if (bn->requires_grad) {
        auto gb = bn->grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gb[j] += on->grad[i * m + j];
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_bias(matmul(x, w), b); }

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) mismatch("concat_cols", parts.front(), p);
    total += p.cols();
  }
  Tensor out = Tensor::zeros({n, total});
  auto o = out.mutable_data();
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < n; ++i) std::copy_n(p.data().begin() + i * c, c, o.begin() + i * total + off);
    off += c;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (any && grad_enabled()) {
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    NodePtr on = out.node();
    record(out, [nodes, on, n, total] {
      std::size_t off = 0;
      for (const auto& pn : nodes) {
        const std::size_t c = pn->shape.back();
        if (pn->requires_grad) {
          auto g = pn->grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += on->grad[i * total + off + j];
        }
        off += c;
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t m = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != m) mismatch("concat_rows", parts.front(), p);
    total += p.rows();
  }
  Tensor out = Tensor::zeros({total, m});
  auto o = out.mutable_data();
  std::size_t off = 0;
  bool any = false;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), o.begin() + off);
    off += p.numel();
    any = any || p.requires_grad();
  }
  if (any && grad_enabled()) {
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    NodePtr on = out.node();
    record(out, [nodes, on] {
      std::size_t off = 0;
      for (const auto& pn : nodes) {
        if (pn->requires_grad) {
          auto g = pn->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[off + i];
        }
        off += pn->data.size();
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &x.data()[i * m];
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (o[i * m + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < m; ++j) o[i * m + j] /= z;
  }
  if (needs_record({&x})) {
    NodePtr xn = x.node(), on = out.node();
    record(out, [xn, on, n, m] {
      auto gx = xn->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += on->grad[i * m + j] * on->data[i * m + j];
        for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += on->data[i * m + j] * (on->grad[i * m + j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t n = x.rows(), m = x.cols();
  if (gamma.numel() != m) mismatch("layer_norm", x, gamma);
  if (beta.numel() != m) mismatch("layer_norm", x, beta);
  Tensor out = Tensor::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(n * m);
  auto rstd = std::make_shared<std::vector<double>>(n);
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &x.data()[i * m];
    double mu = 0.0;
    for (std::size_t j = 0; j < m; ++j) mu += row[j];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(m);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[i] = rs;
    for (std::size_t j = 0; j < m; ++j) {
      const double h = (row[j] - mu) * rs;
      (*xhat)[i * m + j] = h;
      o[i * m + j] = h * gamma.data()[j] + beta.data()[j];
    }
  }
  if (needs_record({&x, &gamma, &beta})) {
    NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    record(out, [xn, gn, bn, on, xhat, rstd, n, m] {
      const auto& G = on->grad;
      if (gn->requires_grad) {
        auto gg = gn->grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gg[j] += G[i * m + j] * (*xhat)[i * m + j];
      }
      if (bn->requires_grad) {
        auto gb = bn->grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gb[j] += G[i * m + j];
      }
      if (xn->requires_grad) {
        auto gx = xn->grad_buffer();
        std::vector<double> gh(m);
        for (std::size_t i = 0; i < n; ++i) {
          double mean_gh = 0.0, mean_ghx = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            gh[j] = G[i * m + j] * gn->data[j];
            mean_gh += gh[j];
            mean_ghx += gh[j] * (*xhat)[i * m + j];
          }
          mean_gh /= static_cast<double>(m);
          mean_ghx /= static_cast<double>(m);
          for (std::size_t j = 0; j < m; ++j)
            gx[i * m + j] += (*rstd)[i] * (gh[j] - mean_gh - (*xhat)[i * m + j] * mean_ghx);
        }
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> idx) {
  const std::size_t rows = table.rows(), m = table.cols();
  for (auto r : idx) {
    if (r != kZeroRow && r >= rows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(r) + " out of range for table " +
                              shape_str(table.shape()));
    }
  }
  Tensor out = Tensor::zeros({idx.size(), m});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < idx.size(); ++i)
    if (idx[i] != kZeroRow) std::copy_n(table.data().begin() + idx[i] * m, m, o.begin() + i * m);
  if (needs_record({&table})) {
    NodePtr tn = table.node(), on = out.node();
    std::vector<std::size_t> ix(idx.begin(), idx.end());
    record(out, [tn, on, ix = std::move(ix), m] {
      auto g = tn->grad_buffer();
      for (std::size_t i = 0; i < ix.size(); ++i) {
        if (ix[i] == kZeroRow) continue;
        for (std::size_t j = 0; j < m; ++j) g[ix[i] * m + j] += on->grad[i * m + j];
      }
    });
  }
  return out;
}

Tensor select_rows(std::span<const std::uint8_t> take_a, const Tensor& a, const Tensor& b) {
  require_same("select_rows", a, b);
  const std::size_t n = a.rows(), m = a.cols();
  if (take_a.size() != n)
    throw ShapeError("select_rows: mask length " + std::to_string(take_a.size()) + " vs rows " + std::to_string(n));
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& src = take_a[i] ? a : b;
    std::copy_n(src.data().begin() + i * m, m, o.begin() + i * m);
  }
  if (needs_record({&a, &b})) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    std::vector<std::uint8_t> mask(take_a.begin(), take_a.end());
    record(out, [an, bn, on, mask = std::move(mask), m] {
      for (std::size_t i = 0; i < mask.size(); ++i) {
        const auto& dst = mask[i] ? an : bn;
        if (!dst->requires_grad) continue;
        auto g = dst->grad_buffer();
        for (std::size_t j = 0; j < m; ++j) g[i * m + j] += on->grad[i * m + j];
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (needs_record({&x})) {
    NodePtr xn = x.node(), on = out.node();
    record(out, [xn, on] {
      auto g = xn->grad_buffer();
      for (auto& v : g) v += on->grad[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return mul(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  const std::size_t n = logits.rows(), m = logits.cols();
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(logits.shape()));
  }
  auto probs = std::make_shared<std::vector<double>>(n * m);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= m) throw std::out_of_range("cross_entropy: label out of range");
    const double* row = &logits.data()[i * m];
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += ((*probs)[i * m + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < m; ++j) (*probs)[i * m + j] /= z;
    loss += (std::log(z) + mx) - row[labels[i]];
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(n));
  if (needs_record({&logits})) {
    NodePtr ln = logits.node(), on = out.node();
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    record(out, [ln, on, probs, lab = std::move(lab), n, m] {
      auto g = ln->grad_buffer();
      const double scale = on->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g[i * m + j] += scale * ((*probs)[i * m + j] - (j == lab[i] ? 1.0 : 0.0));
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (auto& v : *mask) v = u(rng) < p ? 0.0 : keep_scale;
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x.data()[i] * (*mask)[i];
  if (needs_record({&x})) {
    NodePtr xn = x.node(), on = out.node();
    record(out, [xn, on, mask] {
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * (*mask)[i];
    });
  }
  return out;
}

namespace {

void check_attention_args(const Tensor& q, const Tensor& k, std::span<const Segment> segments,
                          std::span<const std::uint8_t> key_valid, std::size_t num_heads) {
  require_same("segment_attention", q, k);
  if (num_heads == 0 || q.cols() % num_heads != 0) {
    throw ShapeError("segment_attention: width " + std::to_string(q.cols()) + " not divisible by " +
                     std::to_string(num_heads) + " heads");
  }
  for (const auto& s : segments) {
    if (s.start + s.length > q.rows()) throw ShapeError("segment_attention: segment exceeds rows");
  }
  if (!key_valid.empty() && key_valid.size() != q.rows()) {
    throw ShapeError("segment_attention: key mask length mismatch");
  }
}

// Probabilities for one (segment, head): [len x len], masked keys get exactly 0.
void head_probs(const Tensor& q, const Tensor& k, const Segment& s, std::size_t h, std::size_t dh,
                std::span<const std::uint8_t> key_valid, double* p) {
  const std::size_t D = q.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto Q = q.data();
  const auto K = k.data();
  for (std::size_t i = 0; i < s.length; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    double* row = p + i * s.length;
    for (std::size_t j = 0; j < s.length; ++j) {
      if (!key_valid.empty() && !key_valid[s.start + j]) continue;
      double dot = 0.0;
      for (std::size_t c = 0; c < dh; ++c) dot += Q[(s.start + i) * D + h * dh + c] * K[(s.start + j) * D + h * dh + c];
      row[j] = dot * scale;
      mx = std::max(mx, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < s.length; ++j) {
      if (!key_valid.empty() && !key_valid[s.start + j]) {
        row[j] = 0.0;
        continue;
      }
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < s.length; ++j) row[j] /= z;
  }
}

}  // namespace

std::vector<std::vector<std::vector<double>>> attention_probs(const Tensor& q, const Tensor& k,
                                                              std::span<const Segment> segments,
                                                              std::span<const std::uint8_t> key_valid,
                                                              std::size_t num_heads) {
  check_attention_args(q, k, segments, key_valid, num_heads);
  const std::size_t dh = q.cols() / num_heads;
  std::vector<std::vector<std::vector<double>>> out;
  for (const auto& s : segments) {
    auto& per_head = out.emplace_back();
    for (std::size_t h = 0; h < num_heads; ++h) {
      auto& p = per_head.emplace_back(s.length * s.length, 0.0);
      head_probs(q, k, s, h, dh, key_valid, p.data());
    }
  }
  return out;
}

Tensor segment_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const Segment> segments,
                         std::span<const std::uint8_t> key_valid, std::size_t num_heads) {
  check_attention_args(q, k, segments, key_valid, num_heads);
  require_same("segment_attention", q, v);
  const std::size_t D = q.cols(), dh = D / num_heads;
  Tensor out = Tensor::zeros(q.shape());
  auto O = out.mutable_data();
  const auto V = v.data();

  // probs stored per (segment, head) contiguously.
  auto probs = std::make_shared<std::vector<double>>();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& s : segments) {
    offsets.push_back(total);
    total += num_heads * s.length * s.length;
  }
  probs->assign(total, 0.0);

  for (std::size_t si = 0; si < segments.size(); ++si) {
    const auto& s = segments[si];
    for (std::size_t h = 0; h < num_heads; ++h) {
      double* p = probs->data() + offsets[si] + h * s.length * s.length;
      head_probs(q, k, s, h, dh, key_valid, p);
      for (std::size_t i = 0; i < s.length; ++i)
        for (std::size_t j = 0; j < s.length; ++j) {
          const double w = p[i * s.length + j];
          if (w == 0.0) continue;
          for (std::size_t c = 0; c < dh; ++c)
            O[(s.start + i) * D + h * dh + c] += w * V[(s.start + j) * D + h * dh + c];
        }
    }
  }

  if (needs_record({&q, &k, &v})) {
    NodePtr qn = q.node(), kn = k.node(), vn = v.node(), on = out.node();
    std::vector<Segment> segs(segments.begin(), segments.end());
    record(out, [qn, kn, vn, on, probs, segs = std::move(segs), offsets = std::move(offsets), num_heads, D, dh] {
      const auto& G = on->grad;
      std::vector<double> gq(qn->data.size(), 0.0), gk(kn->data.size(), 0.0), gv(vn->data.size(), 0.0);
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
      std::vector<double> dp;
      for (std::size_t si = 0; si < segs.size(); ++si) {
        const auto& s = segs[si];
        const std::size_t L = s.length;
        dp.assign(L * L, 0.0);
        for (std::size_t h = 0; h < num_heads; ++h) {
          const double* p = probs->data() + offsets[si] + h * L * L;
          // dV += P^T dO ; dP = dO V^T
          for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < L; ++j) {
              const double w = p[i * L + j];
              double acc = 0.0;
              for (std::size_t c = 0; c < dh; ++c) {
                const double g = G[(s.start + i) * D + h * dh + c];
                gv[(s.start + j) * D + h * dh + c] += w * g;
                acc += g * vn->data[(s.start + j) * D + h * dh + c];
              }
              dp[i * L + j] = acc;
            }
          // dS = P * (dP - rowsum(P * dP))
          for (std::size_t i = 0; i < L; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < L; ++j) dot += p[i * L + j] * dp[i * L + j];
            for (std::size_t j = 0; j < L; ++j) {
              const double ds = p[i * L + j] * (dp[i * L + j] - dot) * scale;
              if (ds == 0.0) continue;
              for (std::size_t c = 0; c < dh; ++c) {
                gq[(s.start + i) * D + h * dh + c] += ds * kn->data[(s.start + j) * D + h * dh + c];
                gk[(s.start + j) * D + h * dh + c] += ds * qn->data[(s.start + i) * D + h * dh + c];
              }
            }
          }
        }
      }
      accumulate(qn, gq);
      accumulate(kn, gk);
      accumulate(vn, gv);
    });
  }
  return out;
}

}  // namespace tckd::ops
