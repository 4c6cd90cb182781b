#include "pfvg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pfvg/errors.hpp"

namespace pfvg {

namespace {

enum class Broadcast { Same, Row, Scalar };

Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.dims() == b.dims()) {
    return Broadcast::Same;
  }
  if (b.numel() == 1) {
    return Broadcast::Scalar;
  }
  if (b.rank() == 1 && a.rank() >= 1 && b.dim(0) == a.dims().back()) {
    return Broadcast::Row;
  }
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(b.dims()) +
                   " onto " + shape_string(a.dims()));
}

inline std::size_t b_index(Broadcast kind, std::size_t i, std::size_t width) {
  switch (kind) {
    case Broadcast::Same:
      return i;
    case Broadcast::Row:
      return i % width;
    case Broadcast::Scalar:
      return 0;
  }
  return 0;
}

const std::vector<double>& pdata(detail::Node& self, std::size_t i) {
  return self.parents[i]->data;
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + shape_string(t.dims()));
  }
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const auto kind = broadcast_kind("add", a, b);
  const auto& x = a.data();
  const auto& y = b.data();
  const std::size_t n = x.size();
  const std::size_t w = a.dims().back();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = x[i] + y[b_index(kind, i, w)];
  }
  return make_op_result(a.dims(), std::move(out), {a, b}, [kind, w](detail::Node& self) {
    const auto& g = self.pending;
    if (double* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
      }
    }
    if (double* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        gb[b_index(kind, i, w)] += g[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const auto kind = broadcast_kind("sub", a, b);
  const auto& x = a.data();
  const auto& y = b.data();
  const std::size_t n = x.size();
  const std::size_t w = a.dims().back();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = x[i] - y[b_index(kind, i, w)];
  }
  return make_op_result(a.dims(), std::move(out), {a, b}, [kind, w](detail::Node& self) {
    const auto& g = self.pending;
    if (double* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
      }
    }
    if (double* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        gb[b_index(kind, i, w)] -= g[i];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto kind = broadcast_kind("mul", a, b);
  const auto& x = a.data();
  const auto& y = b.data();
  const std::size_t n = x.size();
  const std::size_t w = a.dims().back();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = x[i] * y[b_index(kind, i, w)];
  }
  return make_op_result(a.dims(), std::move(out), {a, b}, [kind, w](detail::Node& self) {
    const auto& g = self.pending;
    const auto& x = pdata(self, 0);
    const auto& y = pdata(self, 1);
    if (double* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * y[b_index(kind, i, w)];
      }
    }
    if (double* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        gb[b_index(kind, i, w)] += g[i] * x[i];
      }
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) {
    v *= s;
  }
  return make_op_result(a.dims(), std::move(out), {a}, [s](detail::Node& self) {
    if (double* ga = parent_grad(self, 0)) {
      const auto& g = self.pending;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * s;
      }
    }
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) {
    v += s;
  }
  return make_op_result(a.dims(), std::move(out), {a}, [](detail::Node& self) {
    if (double* ga = parent_grad(self, 0)) {
      const auto& g = self.pending;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
      }
    }
  });
}

Tensor square(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) {
    v *= v;
  }
  return make_op_result(a.dims(), std::move(out), {a}, [](detail::Node& self) {
    if (double* ga = parent_grad(self, 0)) {
      const auto& g = self.pending;
      const auto& x = pdata(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += 2.0 * x[i] * g[i];
      }
    }
  });
}

Tensor gelu(const Tensor& a) {
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 * 0.5));
  }
  return make_op_result(a.dims(), std::move(out), {a}, [](detail::Node& self) {
    if (double* ga = parent_grad(self, 0)) {
      const auto& g = self.pending;
      const auto& x = pdata(self, 0);
      const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(x[i] * std::numbers::sqrt2 * 0.5));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
        ga[i] += g[i] * (cdf + x[i] * pdf);
      }
    }
  });
}

Tensor silu(const Tensor& a) {
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] / (1.0 + std::exp(-x[i]));
  }
  return make_op_result(a.dims(), std::move(out), {a}, [](detail::Node& self) {
    if (double* ga = parent_grad(self, 0)) {
      const auto& g = self.pending;
      const auto& x = pdata(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double sig = 1.0 / (1.0 + std::exp(-x[i]));
        ga[i] += g[i] * sig * (1.0 + x[i] * (1.0 - sig));
      }
    }
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) {
    acc += v;
  }
  return make_op_result({1}, {acc}, {a}, [](detail::Node& self) {
    if (double* ga = parent_grad(self, 0)) {
      const double g = self.pending[0];
      const std::size_t n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] += g;
      }
    }
  });
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

namespace {

// Row-major [rows x cols] -> [cols x rows].
std::vector<double> transposed(const double* x, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      out[j * rows + i] = x[i * cols + j];
    }
  }
  return out;
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dims disagree for " + shape_string(a.dims()) + " * " +
                     shape_string(b.dims()));
  }
  const double* A = a.data().data();
  const double* B = b.data().data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* c = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        c[j] += av * brow[j];
      }
    }
  }
  return make_op_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const double* G = self.pending.data();
    const double* A = pdata(self, 0).data();
    const double* B = pdata(self, 1).data();
    // dA = dC * B^T
    if (double* ga = parent_grad(self, 0)) {
      // Row-wise axpy over B^T: same j-ascending sum per element as a dot
      // product, but vectorizable.
      const std::vector<double> bt = transposed(B, k, n);
      std::vector<double> acc(k);
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = G + i * n;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = g[j];
          const double* btrow = bt.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) {
            acc[p] += gv * btrow[p];
          }
        }
        for (std::size_t p = 0; p < k; ++p) {
          ga[i * k + p] += acc[p];
        }
      }
    }
    // dB = A^T * dC
    if (double* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          double* dst = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) {
            dst[j] += av * g[j];
          }
        }
      }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2("matmul_nt", a);
  require_rank2("matmul_nt", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: inner dims disagree for " + shape_string(a.dims()) + " * " +
                     shape_string(b.dims()) + "^T");
  }
  const double* A = a.data().data();
  const double* B = b.data().data();
  // Axpy over B^T keeps the p-ascending sum of each dot product.
  const std::vector<double> bt = transposed(B, n, k);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = A + i * k;
    double* c = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* btrow = bt.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        c[j] += av * btrow[j];
      }
    }
  }
  return make_op_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const double* G = self.pending.data();
    const double* A = pdata(self, 0).data();
    const double* B = pdata(self, 1).data();
    // dA = dC * B
    if (double* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        double* dst = ga + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          const double* brow = B + j * k;
          for (std::size_t p = 0; p < k; ++p) {
            dst[p] += g * brow[p];
          }
        }
      }
    }
    // dB = dC^T * A
    if (double* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          double* dst = gb + j * k;
          for (std::size_t p = 0; p < k; ++p) {
            dst[p] += g * arow[p];
          }
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  const std::size_t m = a.dim(0), n = a.dim(1);
  const auto& x = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out[j * m + i] = x[i * n + j];
    }
  }
  return make_op_result({n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    if (double* ga = parent_grad(self, 0)) {
      const auto& g = self.pending;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          ga[i * n + j] += g[j * m + i];
        }
      }
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& d = x.dims();
  if (axis >= d.size()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_string(d));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) {
    outer *= d[i];
  }
  for (std::size_t i = axis + 1; i < d.size(); ++i) {
    inner *= d[i];
  }
  const std::size_t len = d[axis];
  const auto& in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t s = 0; s < inner; ++s) {
      const std::size_t base = o * len * inner + s;
      double mx = in[base];
      for (std::size_t i = 1; i < len; ++i) {
        mx = std::max(mx, in[base + i * inner]);
      }
      double z = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double e = std::exp(in[base + i * inner] - mx);
        out[base + i * inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < len; ++i) {
        out[base + i * inner] /= z;
      }
    }
  }
  return make_op_result(d, std::move(out), {x}, [outer, inner, len](detail::Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) {
      return;
    }
    const auto& y = self.data;
    const auto& g = self.pending;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t s = 0; s < inner; ++s) {
        const std::size_t base = o * len * inner + s;
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
          dot += g[base + i * inner] * y[base + i * inner];
        }
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t idx = base + i * inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Tensor softmax_last(const Tensor& x) {
  return softmax(x, x.rank() - 1);
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t n = x.dims().back();
  if (n < 2) {
    throw ShapeError("layernorm: last axis must have length >= 2, got " + shape_string(x.dims()));
  }
  const bool affine = gain.defined();
  if (affine != bias.defined()) {
    throw ShapeError("layernorm: gain and bias must both be given or both omitted");
  }
  if (affine && (gain.dims() != Shape{n} || bias.dims() != Shape{n})) {
    throw ShapeError("layernorm: gain/bias must be [" + std::to_string(n) + "], got " +
                     shape_string(gain.dims()) + " and " + shape_string(bias.dims()));
  }
  const std::size_t rows = x.numel() / n;
  const auto& in = x.data();
  std::vector<double> xhat(in.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * n;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mu += row[i];
    }
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = row[i] - mu;
      var += c * c;
    }
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
      xhat[r * n + i] = (row[i] - mu) * inv_std[r];
    }
  }
  std::vector<double> out = xhat;
  std::vector<Tensor> inputs{x};
  if (affine) {
    const auto& gv = gain.data();
    const auto& bv = bias.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = xhat[i] * gv[i % n] + bv[i % n];
    }
    inputs.push_back(gain);
    inputs.push_back(bias);
  }
  return make_op_result(
      x.dims(), std::move(out), std::move(inputs),
      [n, rows, affine, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        const auto& g = self.pending;
        if (affine) {
          if (double* gg = parent_grad(self, 1)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
              gg[i % n] += g[i] * xhat[i];
            }
          }
          if (double* gb = parent_grad(self, 2)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
              gb[i % n] += g[i];
            }
          }
        }
        double* gx = parent_grad(self, 0);
        if (!gx) {
          return;
        }
        const double* gain_v = affine ? self.parents[1]->data.data() : nullptr;
        std::vector<double> dxhat(n);
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t idx = r * n + i;
            dxhat[i] = affine ? g[idx] * gain_v[i] : g[idx];
            m1 += dxhat[i];
            m2 += dxhat[i] * xhat[idx];
          }
          m1 /= static_cast<double>(n);
          m2 /= static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t idx = r * n + i;
            gx[idx] += inv_std[r] * (dxhat[i] - m1 - xhat[idx] * m2);
          }
        }
      });
}

Tensor reshape(const Tensor& a, Shape dims) {
  if (shape_numel(dims) != a.numel()) {
    throw ShapeError("reshape: " + shape_string(a.dims()) + " cannot become " + shape_string(dims));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op_result(std::move(dims), std::move(out), {a}, [](detail::Node& self) {
    if (double* ga = parent_grad(self, 0)) {
      const auto& g = self.pending;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
      }
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) {
    throw ShapeError("concat_rows: no inputs");
  }
  Shape tail(parts[0].dims().begin() + 1, parts[0].dims().end());
  std::size_t rows = 0;
  for (const auto& p : parts) {
    Shape t(p.dims().begin() + 1, p.dims().end());
    if (t != tail) {
      throw ShapeError("concat_rows: " + shape_string(p.dims()) + " does not match " +
                       shape_string(parts[0].dims()));
    }
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * shape_numel(tail));
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    sizes.push_back(p.numel());
  }
  Shape dims{rows};
  dims.insert(dims.end(), tail.begin(), tail.end());
  return make_op_result(std::move(dims), std::move(out), parts, [sizes](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < sizes.size(); ++p) {
      if (double* gp = parent_grad(self, p)) {
        for (std::size_t i = 0; i < sizes[p]; ++i) {
          gp[i] += self.pending[off + i];
        }
      }
      off += sizes[p];
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  if (a.rank() < 1 || count == 0 || start + count > a.dim(0)) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + shape_string(a.dims()));
  }
  const std::size_t width = a.numel() / a.dim(0);
  const auto& x = a.data();
  std::vector<double> out(x.begin() + start * width, x.begin() + (start + count) * width);
  Shape dims = a.dims();
  dims[0] = count;
  const std::size_t off = start * width;
  return make_op_result(std::move(dims), std::move(out), {a}, [off](detail::Node& self) {
    if (double* ga = parent_grad(self, 0)) {
      const auto& g = self.pending;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[off + i] += g[i];
      }
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) {
    throw ShapeError("concat_cols: no inputs");
  }
  const std::size_t rows = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2("concat_cols", p);
    if (p.dim(0) != rows) {
      throw ShapeError("concat_cols: " + shape_string(p.dims()) + " does not match " +
                       shape_string(parts[0].dims()));
    }
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(rows * total);
  std::size_t col = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& x = parts[p].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(x.data() + r * widths[p], widths[p], out.data() + r * total + col);
    }
    col += widths[p];
  }
  return make_op_result({rows, total}, std::move(out), parts,
                        [rows, total, widths](detail::Node& self) {
                          std::size_t col = 0;
                          for (std::size_t p = 0; p < widths.size(); ++p) {
                            if (double* gp = parent_grad(self, p)) {
                              for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t c = 0; c < widths[p]; ++c) {
                                  gp[r * widths[p] + c] += self.pending[r * total + col + c];
                                }
                              }
                            }
                            col += widths[p];
                          }
                        });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_rank2("slice_cols", a);
  const std::size_t rows = a.dim(0), width = a.dim(1);
  if (count == 0 || start + count > width) {
    throw ShapeError("slice_cols: cols [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + shape_string(a.dims()));
  }
  const auto& x = a.data();
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data() + r * width + start, count, out.data() + r * count);
  }
  return make_op_result({rows, count}, std::move(out), {a},
                        [rows, width, start, count](detail::Node& self) {
                          if (double* ga = parent_grad(self, 0)) {
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < count; ++c) {
                                ga[r * width + start + c] += self.pending[r * count + c];
                              }
                            }
                          }
                        });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank2("gather_rows", table);
  const std::size_t rows = table.dim(0), width = table.dim(1);
  if (ids.empty()) {
    throw ShapeError("gather_rows: empty id list");
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * width);
  const auto& x = table.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= rows) {
      throw ShapeError("gather_rows: id " + std::to_string(idx[r]) + " out of range for " +
                       shape_string(table.dims()));
    }
    std::copy_n(x.data() + idx[r] * width, width, out.data() + r * width);
  }
  return make_op_result({idx.size(), width}, std::move(out), {table},
                        [idx, width](detail::Node& self) {
                          if (double* ga = parent_grad(self, 0)) {
                            for (std::size_t r = 0; r < idx.size(); ++r) {
                              for (std::size_t c = 0; c < width; ++c) {
                                ga[idx[r] * width + c] += self.pending[r * width + c];
                              }
                            }
                          }
                        });
}

Tensor pool_rows(const Tensor& a, const std::vector<std::vector<std::size_t>>& groups) {
  require_rank2("pool_rows", a);
  const std::size_t rows = a.dim(0), width = a.dim(1);
  if (groups.empty()) {
    throw ShapeError("pool_rows: no groups");
  }
  const auto& x = a.data();
  std::vector<double> out(groups.size() * width, 0.0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) {
      throw ShapeError("pool_rows: empty group " + std::to_string(g));
    }
    const double inv = 1.0 / static_cast<double>(groups[g].size());
    double* dst = out.data() + g * width;
    for (auto r : groups[g]) {
      if (r >= rows) {
        throw ShapeError("pool_rows: row " + std::to_string(r) + " out of range for " +
                         shape_string(a.dims()));
      }
      for (std::size_t c = 0; c < width; ++c) {
        dst[c] += x[r * width + c];
      }
    }
    for (std::size_t c = 0; c < width; ++c) {
      dst[c] *= inv;
    }
  }
  return make_op_result({groups.size(), width}, std::move(out), {a},
                        [groups, width](detail::Node& self) {
                          double* ga = parent_grad(self, 0);
                          if (!ga) {
                            return;
                          }
                          for (std::size_t g = 0; g < groups.size(); ++g) {
                            const double inv = 1.0 / static_cast<double>(groups[g].size());
                            for (auto r : groups[g]) {
                              for (std::size_t c = 0; c < width; ++c) {
                                ga[r * width + c] += self.pending[g * width + c] * inv;
                              }
                            }
                          }
                        });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) {
    throw ShapeError("mse: shape mismatch " + shape_string(a.dims()) + " vs " +
                     shape_string(b.dims()));
  }
  return mean(square(sub(a, b)));
}

} // namespace pfvg
