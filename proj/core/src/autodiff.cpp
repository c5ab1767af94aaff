#include "spar/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "spar/errors.hpp"

namespace spar::ad {

namespace {

void check_same_tape(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw ContractError("operands belong to different tapes");
  }
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

Shape matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

// c[p x r] += a[p x q] * b[q x r]
void gemm_nn(const double* a, const double* b, double* c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    double* ci = c + i * r;
    const double* ai = a + i * q;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = ai[k];
      const double* bk = b + k * r;
      for (std::size_t j = 0; j < r; ++j) ci[j] += aik * bk[j];
    }
  }
}

// c[p x r] += a[p x q] * b[r x q]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    const double* ai = a + i * q;
    double* ci = c + i * r;
    for (std::size_t j = 0; j < r; ++j) {
      const double* bj = b + j * q;
      double s = 0.0;
      for (std::size_t k = 0; k < q; ++k) s += ai[k] * bj[k];
      ci[j] += s;
    }
  }
}

// c[p x r] += a[q x p]^T * b[q x r]
void gemm_tn(const double* a, const double* b, double* c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t k = 0; k < q; ++k) {
    const double* ak = a + k * p;
    const double* bk = b + k * r;
    for (std::size_t i = 0; i < p; ++i) {
      const double aki = ak[i];
      double* ci = c + i * r;
      for (std::size_t j = 0; j < r; ++j) ci[j] += aki * bk[j];
    }
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;
constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

}  // namespace

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = track_gradients_;
  nodes_.push_back(std::move(n));
  param_nodes_[&p] = nodes_.size() - 1;
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw ContractError("input recorded on a different tape");
    if (nodes_[in.id()].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(value(id).shape());
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor& Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_grad) throw ContractError("node has no gradient; was backward() run?");
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (&loss.tape() != this) throw ContractError("loss recorded on a different tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  grad(loss.id()).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.has_grad) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) accumulate(n.param->grad, n.grad);
  }
}

Var add(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) accumulate(t.grad(ia), g);
    if (t.requires_grad(ib)) accumulate(t.grad(ib), g);
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) accumulate(t.grad(ia), g);
    if (t.requires_grad(ib)) {
      auto d = t.grad(ib).data();
      auto s = g.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= s[i];
    }
  });
}

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.grad(self).data();
    if (t.requires_grad(ia)) {
      auto d = t.grad(ia).data();
      auto bv = t.value(ib).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      auto d = t.grad(ib).data();
      auto av = t.value(ia).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, s](Tape& t, std::size_t self) {
    auto g = t.grad(self).data();
    auto d = t.grad(ia).data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * g[i];
  });
}

Var add_bias(Var x, Var bias) {
  check_same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (bv.size() != c) {
    throw DimensionError("add_bias: bias " + shape_string(bv.shape()) + " does not match " +
                         shape_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < r; ++i) {
    auto row = out.row(i);
    for (std::size_t j = 0; j < c; ++j) row[j] += bv[j];
  }
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape().record(std::move(out), {x, bias}, [ix, ib, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ix)) accumulate(t.grad(ix), g);
    if (t.requires_grad(ib)) {
      auto d = t.grad(ib).data();
      for (std::size_t i = 0; i < r; ++i) {
        auto gr = g.row(i);
        for (std::size_t j = 0; j < c; ++j) d[j] += gr[j];
      }
    }
  });
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  const std::size_t p = av.rows(), q = av.cols(), r = bv.cols();
  Tensor out(matrix_shape(p, r));
  gemm_nn(av.data().data(), bv.data().data(), out.data().data(), p, q, r);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, p, q, r](Tape& t, std::size_t self) {
    const double* g = t.grad(self).data().data();
    if (t.requires_grad(ia)) {
      // dA = dC * B^T
      gemm_nt(g, t.value(ib).data().data(), t.grad(ia).data().data(), p, r, q);
    }
    if (t.requires_grad(ib)) {
      // dB = A^T * dC
      gemm_tn(t.value(ia).data().data(), g, t.grad(ib).data().data(), q, p, r);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  check_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: incompatible shapes " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()) + "^T");
  }
  const std::size_t p = av.rows(), q = av.cols(), r = bv.rows();
  Tensor out(matrix_shape(p, r));
  gemm_nt(av.data().data(), bv.data().data(), out.data().data(), p, q, r);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, p, q, r](Tape& t, std::size_t self) {
    const double* g = t.grad(self).data().data();
    if (t.requires_grad(ia)) {
      // dA = dC * B
      gemm_nn(g, t.value(ib).data().data(), t.grad(ia).data().data(), p, r, q);
    }
    if (t.requires_grad(ib)) {
      // dB = dC^T * A
      gemm_tn(g, t.value(ia).data().data(), t.grad(ib).data().data(), r, p, q);
    }
  });
}

Var softmax_rows(Var x, KeyValidity valid) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (!valid.empty() && valid.size() != c) {
    throw DimensionError("softmax_rows: validity has " + std::to_string(valid.size()) +
                         " flags for " + std::to_string(c) + " columns");
  }
  if (!valid.empty() && std::none_of(valid.begin(), valid.end(), [](auto f) { return f != 0; })) {
    throw ContractError("softmax_rows: every key is invalid");
  }
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    auto in = xv.row(i);
    auto o = out.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      if (valid.empty() || valid[j]) mx = std::max(mx, in[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (valid.empty() || valid[j]) {
        o[j] = std::exp(in[j] - mx);
        z += o[j];
      } else {
        o[j] = 0.0;
      }
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= z;
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, r, c](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad(ix);
    for (std::size_t i = 0; i < r; ++i) {
      auto yr = y.row(i);
      auto gr = g.row(i);
      auto dr = d.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += yr[j] * gr[j];
      for (std::size_t j = 0; j < c; ++j) dr[j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  check_same_tape(x, gain);
  check_same_tape(x, bias);
  const Tensor& xv = x.value();
  const std::size_t d = xv.shape().back();
  const std::size_t r = xv.size() / d;
  if (gain.value().size() != d || bias.value().size() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" +
                         shape_string(bias.shape()) + " do not match last dim of " +
                         shape_string(xv.shape()));
  }
  Tensor out(xv.shape());
  // Saved per-row normalized values and inverse std for backward.
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(r);
  auto gv = gain.value().data();
  auto bv = bias.value().data();
  auto xs = xv.data();
  auto os = out.data();
  auto hs = xhat.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = xs.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * is;
      hs[i * d + j] = h;
      os[i * d + j] = gv[j] * h + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [ix, ig, ib, r, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        auto g = t.grad(self).data();
        auto h = xhat.data();
        if (t.requires_grad(ig)) {
          auto dg = t.grad(ig).data();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) dg[j] += g[i * d + j] * h[i * d + j];
        }
        if (t.requires_grad(ib)) {
          auto db = t.grad(ib).data();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) db[j] += g[i * d + j];
        }
        if (t.requires_grad(ix)) {
          auto gain_v = t.value(ig).data();
          auto dx = t.grad(ix).data();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t i = 0; i < r; ++i) {
            double mean_gy = 0.0, mean_gyh = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gy = g[i * d + j] * gain_v[j];
              mean_gy += gy;
              mean_gyh += gy * h[i * d + j];
            }
            mean_gy *= inv_d;
            mean_gyh *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double gy = g[i * d + j] * gain_v[j];
              dx[i * d + j] += inv_std[i] * (gy - mean_gy - h[i * d + j] * mean_gyh);
            }
          }
        }
      });
}

Var gelu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    auto g = t.grad(self).data();
    auto xv = t.value(ix).data();
    auto d = t.grad(ix).data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      d[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t ix = x.id();
  return x.tape().record(Tensor::scalar(s), {x}, [ix](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad(ix).data()) v += g;
  });
}

Var slice_cols(Var x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (count == 0 || start + count > c) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_string(xv.shape()));
  }
  Tensor out({r, count});
  for (std::size_t i = 0; i < r; ++i) {
    auto src = xv.row(i);
    std::copy(src.begin() + start, src.begin() + start + count, out.row(i).begin());
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, r, start, count](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad(ix);
    for (std::size_t i = 0; i < r; ++i) {
      auto gr = g.row(i);
      auto dr = d.row(i);
      for (std::size_t j = 0; j < count; ++j) dr[start + j] += gr[j];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  std::vector<std::size_t> offsets, widths, ids;
  for (const Var& p : parts) {
    if (p.rows() != r) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    offsets.push_back(c);
    widths.push_back(p.cols());
    ids.push_back(p.id());
    c += p.cols();
  }
  Tensor out({r, c});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t i = 0; i < r; ++i) {
      auto src = pv.row(i);
      std::copy(src.begin(), src.end(), out.row(i).begin() + offsets[k]);
    }
  }
  return parts[0].tape().record(std::move(out), parts, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Tensor& d = t.grad(ids[k]);
      for (std::size_t i = 0; i < r; ++i) {
        auto gr = g.row(i);
        auto dr = d.row(i);
        for (std::size_t j = 0; j < widths[k]; ++j) dr[j] += gr[offsets[k] + j];
      }
    }
  });
}

Var slice_rows(Var x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (count == 0 || start + count > r) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_string(xv.shape()));
  }
  std::vector<double> data(xv.data().begin() + start * c, xv.data().begin() + (start + count) * c);
  const std::size_t ix = x.id();
  return x.tape().record(Tensor({count, c}, std::move(data)), {x},
                         [ix, start, c](Tape& t, std::size_t self) {
                           auto g = t.grad(self).data();
                           auto d = t.grad(ix).data();
                           for (std::size_t i = 0; i < g.size(); ++i) d[start * c + i] += g[i];
                         });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  std::vector<double> data;
  std::vector<std::size_t> offsets, ids;
  for (const Var& p : parts) {
    if (p.cols() != c) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    offsets.push_back(r * c);
    ids.push_back(p.id());
    r += p.rows();
    auto pv = p.value().data();
    data.insert(data.end(), pv.begin(), pv.end());
  }
  return parts[0].tape().record(Tensor({r, c}, std::move(data)), parts, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self).data();
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto d = t.grad(ids[k]).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[offsets[k] + i];
    }
  });
}

Var gather_rows(Var x, std::span<const std::size_t> indices) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (indices.empty()) throw ContractError("gather_rows: empty index list");
  Tensor out({indices.size(), c});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= r) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                           shape_string(xv.shape()));
    }
    auto src = xv.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const std::size_t ix = x.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return x.tape().record(std::move(out), {x}, [ix, idx = std::move(idx), c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad(ix);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto gr = g.row(i);
      auto dr = d.row(idx[i]);
      for (std::size_t j = 0; j < c; ++j) dr[j] += gr[j];
    }
  });
}

Var repeat_rows(Var x, std::size_t times) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (times == 0) throw ContractError("repeat_rows: times must be positive");
  Tensor out({r * times, c});
  for (std::size_t i = 0; i < r; ++i) {
    auto src = xv.row(i);
    for (std::size_t k = 0; k < times; ++k) std::copy(src.begin(), src.end(), out.row(i * times + k).begin());
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, r, c, times](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad(ix);
    for (std::size_t i = 0; i < r; ++i) {
      auto dr = d.row(i);
      for (std::size_t k = 0; k < times; ++k) {
        auto gr = g.row(i * times + k);
        for (std::size_t j = 0; j < c; ++j) dr[j] += gr[j];
      }
    }
  });
}

Var tile_rows(Var x, std::size_t times) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (times == 0) throw ContractError("tile_rows: times must be positive");
  std::vector<double> data;
  data.reserve(r * c * times);
  for (std::size_t k = 0; k < times; ++k) data.insert(data.end(), xv.data().begin(), xv.data().end());
  const std::size_t ix = x.id();
  return x.tape().record(Tensor({r * times, c}, std::move(data)), {x}, [ix, times](Tape& t, std::size_t self) {
    auto g = t.grad(self).data();
    auto d = t.grad(ix).data();
    const std::size_t n = d.size();
    for (std::size_t k = 0; k < times; ++k)
      for (std::size_t i = 0; i < n; ++i) d[i] += g[k * n + i];
  });
}

Var replace_rows(Var base, std::span<const std::size_t> indices, Var values) {
  check_same_tape(base, values);
  const Tensor& bv = base.value();
  const Tensor& vv = values.value();
  const std::size_t r = bv.rows(), c = bv.cols();
  if (vv.cols() != c || vv.rows() != indices.size()) {
    throw DimensionError("replace_rows: values " + shape_string(vv.shape()) + " for " +
                         std::to_string(indices.size()) + " rows of " + shape_string(bv.shape()));
  }
  Tensor out = bv;
  std::vector<std::uint8_t> replaced(r, 0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= r) throw DimensionError("replace_rows: index out of range");
    if (replaced[indices[i]]) throw ContractError("replace_rows: duplicate index");
    replaced[indices[i]] = 1;
    auto src = vv.row(i);
    std::copy(src.begin(), src.end(), out.row(indices[i]).begin());
  }
  const std::size_t ib = base.id(), iv = values.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return base.tape().record(
      std::move(out), {base, values},
      [ib, iv, r, c, idx = std::move(idx), replaced = std::move(replaced)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ib)) {
          Tensor& d = t.grad(ib);
          for (std::size_t i = 0; i < r; ++i) {
            if (replaced[i]) continue;
            auto gr = g.row(i);
            auto dr = d.row(i);
            for (std::size_t j = 0; j < c; ++j) dr[j] += gr[j];
          }
        }
        if (t.requires_grad(iv)) {
          Tensor& d = t.grad(iv);
          for (std::size_t i = 0; i < idx.size(); ++i) {
            auto gr = g.row(idx[i]);
            auto dr = d.row(i);
            for (std::size_t j = 0; j < c; ++j) dr[j] += gr[j];
          }
        }
      });
}

Var mean_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.cols();
  if (rows.empty()) throw ContractError("mean_rows: no rows selected");
  Tensor out({1, c});
  for (std::size_t i : rows) {
    if (i >= xv.rows()) throw DimensionError("mean_rows: row index out of range");
    auto src = xv.row(i);
    for (std::size_t j = 0; j < c; ++j) out[j] += src[j];
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (double& v : out.data()) v *= inv;
  const std::size_t ix = x.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return x.tape().record(std::move(out), {x}, [ix, idx = std::move(idx), c, inv](Tape& t, std::size_t self) {
    auto g = t.grad(self).data();
    Tensor& d = t.grad(ix);
    for (std::size_t i : idx) {
      auto dr = d.row(i);
      for (std::size_t j = 0; j < c; ++j) dr[j] += inv * g[j];
    }
  });
}

Var masked_mse(Var pred, const Tensor& target, std::span<const std::size_t> rows) {
  const Tensor& pv = pred.value();
  check_same_shape("masked_mse", pv, target);
  const std::size_t c = pv.cols();
  if (rows.empty()) return pred.tape().constant(Tensor::scalar(0.0));
  const double inv = 1.0 / static_cast<double>(rows.size() * c);
  double s = 0.0;
  for (std::size_t i : rows) {
    auto pr = pv.row(i);
    auto tr = target.row(i);
    for (std::size_t j = 0; j < c; ++j) {
      const double e = pr[j] - tr[j];
      s += e * e;
    }
  }
  const std::size_t ip = pred.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return pred.tape().record(
      Tensor::scalar(s * inv), {pred},
      [ip, idx = std::move(idx), target, c, inv](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        const Tensor& pv = t.value(ip);
        Tensor& d = t.grad(ip);
        for (std::size_t i : idx) {
          auto pr = pv.row(i);
          auto tr = target.row(i);
          auto dr = d.row(i);
          for (std::size_t j = 0; j < c; ++j) dr[j] += g * 2.0 * inv * (pr[j] - tr[j]);
        }
      });
}

Var cross_entropy(Var logits, std::size_t label) {
  const Tensor& lv = logits.value();
  const std::size_t c = lv.size();
  if (label >= c) throw ContractError("cross_entropy: label " + std::to_string(label) + " out of range");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : lv.data()) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : lv.data()) z += std::exp(v - mx);
  const double loss = -(lv[label] - mx - std::log(z));
  const std::size_t il = logits.id();
  return logits.tape().record(Tensor::scalar(loss), {logits}, [il, label, mx, z](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    auto lv = t.value(il).data();
    auto d = t.grad(il).data();
    for (std::size_t j = 0; j < d.size(); ++j) {
      const double p = std::exp(lv[j] - mx) / z;
      d[j] += g * (p - (j == label ? 1.0 : 0.0));
    }
  });
}

}  // namespace spar::ad
