#include "geomim/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace geomim {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b,
                             const std::string& why = {}) {
  std::string msg = std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                    shape_str(b);
  if (!why.empty()) msg += " (" + why + ")";
  throw ShapeError(msg);
}

// b must equal a or a trailing suffix of a. Returns b's element count.
std::size_t broadcast_period(const char* op, const Shape& a, const Shape& b) {
  if (b.size() > a.size()) shape_fail(op, a, b, "second operand has higher rank");
  if (!std::equal(b.rbegin(), b.rend(), a.rbegin())) {
    shape_fail(op, a, b, "only leading-batch expansion of the second operand is supported");
  }
  return numel_of(b);
}

void check_axis(const char* op, const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(a.shape()));
  }
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

std::vector<double> permute_values(std::span<const double> src, const Shape& shape,
                                   const std::vector<std::size_t>& perm) {
  const std::size_t rank = shape.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = shape[perm[i]];
    strides[i] = in_strides[perm[i]];
  }
  std::vector<double> out(src.size());
  if (out.empty()) return out;
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  // Walk the output in row-major order, tracking the source offset.
  const std::size_t last = rank - 1;
  for (std::size_t o = 0; o < out.size();) {
    const std::size_t run = out_shape[last];
    const std::size_t step = strides[last];
    for (std::size_t j = 0; j < run; ++j) out[o++] = src[offset + j * step];
    for (std::size_t d = last; d-- > 0;) {
      ++idx[d];
      offset += strides[d];
      if (idx[d] < out_shape[d]) break;
      offset -= strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return out;
}

void tally_flops(std::size_t m, std::size_t k, std::size_t n, std::size_t batch) {
  const std::uint64_t f = 2ull * m * k * n * batch;
  flop_tally().total += f;
  if (in_attention_core()) flop_tally().attention += f;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t period = broadcast_period("add", a.shape(), b.shape());
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % period];
  Tensor res = make_result(a.shape(), std::move(out));
  return Tape::current().record("add", {a, b}, res, [a, b, res, period] {
    auto g = res.grad();
    accumulate_grad(a, g);
    if (b.requires_grad()) {
      std::vector<double> gb(period, 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % period] += g[i];
      accumulate_grad(b, gb);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const std::size_t period = broadcast_period("sub", a.shape(), b.shape());
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i % period];
  Tensor res = make_result(a.shape(), std::move(out));
  return Tape::current().record("sub", {a, b}, res, [a, b, res, period] {
    auto g = res.grad();
    accumulate_grad(a, g);
    if (b.requires_grad()) {
      std::vector<double> gb(period, 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % period] -= g[i];
      accumulate_grad(b, gb);
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t period = broadcast_period("mul", a.shape(), b.shape());
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i % period];
  Tensor res = make_result(a.shape(), std::move(out));
  return Tape::current().record("mul", {a, b}, res, [a, b, res, period] {
    auto g = res.grad();
    auto av = a.values();
    auto bv = b.values();
    if (a.requires_grad()) {
      std::vector<double> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * bv[i % period];
      accumulate_grad(a, ga);
    }
    if (b.requires_grad()) {
      std::vector<double> gb(period, 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % period] += g[i] * av[i];
      accumulate_grad(b, gb);
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  Tensor res = make_result(a.shape(), std::move(out));
  return Tape::current().record("scale", {a}, res, [a, res, factor] {
    auto g = res.grad();
    std::vector<double> ga(g.begin(), g.end());
    for (double& v : ga) v *= factor;
    accumulate_grad(a, ga);
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) shape_fail("matmul", a.shape(), b.shape(), "rank < 2");
  const std::size_t k = a.shape().back();
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t kb = b.shape()[b.rank() - 2];
  const std::size_t n = b.shape().back();
  if (k != kb) shape_fail("matmul", a.shape(), b.shape(), "inner dimensions differ");

  if (b.rank() == 2) {
    const std::size_t rows = a.numel() / k;
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<double> out(rows * n);
    MutMap(out.data(), rows, n).noalias() =
        ConstMap(a.values().data(), rows, k) * ConstMap(b.values().data(), k, n);
    tally_flops(rows, k, n, 1);
    Tensor res = make_result(std::move(out_shape), std::move(out));
    return Tape::current().record("matmul", {a, b}, res, [a, b, res, rows, k, n] {
      ConstMap g(res.grad().data(), rows, n);
      if (a.requires_grad()) {
        std::vector<double> ga(rows * k);
        MutMap(ga.data(), rows, k).noalias() = g * ConstMap(b.values().data(), k, n).transpose();
        accumulate_grad(a, ga);
      }
      if (b.requires_grad()) {
        std::vector<double> gb(k * n);
        MutMap(gb.data(), k, n).noalias() = ConstMap(a.values().data(), rows, k).transpose() * g;
        accumulate_grad(b, gb);
      }
    });
  }

  if (a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
    shape_fail("matmul", a.shape(), b.shape(), "batch dimensions differ");
  }
  const std::size_t batch = a.numel() / (m * k);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<double> out(batch * m * n);
  for (std::size_t t = 0; t < batch; ++t) {
    MutMap(out.data() + t * m * n, m, n).noalias() =
        ConstMap(a.values().data() + t * m * k, m, k) *
        ConstMap(b.values().data() + t * k * n, k, n);
  }
  tally_flops(m, k, n, batch);
  Tensor res = make_result(std::move(out_shape), std::move(out));
  return Tape::current().record("matmul", {a, b}, res, [a, b, res, batch, m, k, n] {
    auto g = res.grad();
    if (a.requires_grad()) {
      std::vector<double> ga(batch * m * k);
      for (std::size_t t = 0; t < batch; ++t) {
        MutMap(ga.data() + t * m * k, m, k).noalias() =
            ConstMap(g.data() + t * m * n, m, n) *
            ConstMap(b.values().data() + t * k * n, k, n).transpose();
      }
      accumulate_grad(a, ga);
    }
    if (b.requires_grad()) {
      std::vector<double> gb(batch * k * n);
      for (std::size_t t = 0; t < batch; ++t) {
        MutMap(gb.data() + t * k * n, k, n).noalias() =
            ConstMap(a.values().data() + t * m * k, m, k).transpose() *
            ConstMap(g.data() + t * m * n, m, n);
      }
      accumulate_grad(b, gb);
    }
  });
}

Tensor transpose(const Tensor& a, std::size_t axis0, std::size_t axis1) {
  check_axis("transpose", a, axis0);
  check_axis("transpose", a, axis1);
  std::vector<std::size_t> perm(a.rank());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::swap(perm[axis0], perm[axis1]);
  Shape out_shape = a.shape();
  std::swap(out_shape[axis0], out_shape[axis1]);
  Tensor res = make_result(out_shape, permute_values(a.values(), a.shape(), perm));
  // A swap is its own inverse.
  return Tape::current().record("transpose", {a}, res, [a, res, perm, out_shape] {
    accumulate_grad(a, permute_values(res.grad(), out_shape, perm));
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) shape_fail("reshape", a.shape(), shape, "element count");
  Tensor res = make_result(std::move(shape), std::vector<double>(a.values().begin(),
                                                                  a.values().end()));
  return Tape::current().record("reshape", {a}, res,
                                [a, res] { accumulate_grad(a, res.grad()); });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  check_axis("slice", a, axis);
  if (start + length > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") exceeds axis " +
                     std::to_string(axis) + " of shape " + shape_str(a.shape()));
  }
  const auto s = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  std::vector<double> out(s.outer * length * s.inner);
  auto av = a.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(av.begin() + (o * s.n + start) * s.inner, length * s.inner,
                out.begin() + o * length * s.inner);
  }
  Tensor res = make_result(std::move(out_shape), std::move(out));
  return Tape::current().record("slice", {a}, res, [a, res, s, start, length] {
    auto g = res.grad();
    std::vector<double> ga(a.numel(), 0.0);
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(g.begin() + o * length * s.inner, length * s.inner,
                  ga.begin() + (o * s.n + start) * s.inner);
    }
    accumulate_grad(a, ga);
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  check_axis("concat", parts[0], axis);
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != out_shape.size()) shape_fail("concat", parts[0].shape(), p.shape());
    probe[axis] = 0;
    if (probe != out_shape) shape_fail("concat", parts[0].shape(), p.shape());
    widths.push_back(p.dim(axis));
  }
  for (auto w : widths) out_shape[axis] += w;
  const auto s = split_at(out_shape, axis);
  std::vector<double> out(numel_of(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto pv = parts[p].values();
    const std::size_t chunk = widths[p] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.begin() + o * chunk, chunk, out.begin() + (o * s.n + offset) * s.inner);
    }
    offset += widths[p];
  }
  Tensor res = make_result(out_shape, std::move(out));
  return Tape::current().record("concat", parts, res, [parts, res, widths, s] {
    auto g = res.grad();
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const std::size_t chunk = widths[p] * s.inner;
      if (parts[p].requires_grad()) {
        std::vector<double> gp(s.outer * chunk);
        for (std::size_t o = 0; o < s.outer; ++o) {
          std::copy_n(g.begin() + (o * s.n + offset) * s.inner, chunk, gp.begin() + o * chunk);
        }
        accumulate_grad(parts[p], gp);
      }
      offset += widths[p];
    }
  });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  check_axis("softmax", a, axis);
  const auto s = split_at(a.shape(), axis);
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, av[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(av[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= total;
    }
  }
  Tensor res = make_result(a.shape(), std::move(out));
  return Tape::current().record("softmax", {a}, res, [a, res, s] {
    auto g = res.grad();
    auto y = res.values();
    std::vector<double> ga(g.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t i = base + j * s.inner;
          dot += g[i] * y[i];
        }
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t i = base + j * s.inner;
          ga[i] = y[i] * (g[i] - dot);
        }
      }
    }
    accumulate_grad(a, ga);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d}) shape_fail("layer_norm", x.shape(), gamma.shape(), "gamma");
  if (beta.shape() != Shape{d}) shape_fail("layer_norm", x.shape(), beta.shape(), "beta");
  const std::size_t rows = x.numel() / d;
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  Tensor res = make_result(x.shape(), std::move(out));
  return Tape::current().record(
      "layer_norm", {x, gamma, beta}, res,
      [x, gamma, beta, res, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d] {
        auto g = res.grad();
        auto gv = gamma.values();
        if (x.requires_grad()) {
          std::vector<double> gx(g.size());
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gv[j];
              m1 += dh;
              m2 += dh * xhat[r * d + j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gv[j];
              gx[r * d + j] = inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
            }
          }
          accumulate_grad(x, gx);
        }
        if (gamma.requires_grad() || beta.requires_grad()) {
          std::vector<double> gg(d, 0.0), gb(d, 0.0);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              gg[j] += g[r * d + j] * xhat[r * d + j];
              gb[j] += g[r * d + j];
            }
          }
          accumulate_grad(gamma, gg);
          accumulate_grad(beta, gb);
        }
      });
}

Tensor gelu(const Tensor& a) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * std::numbers::sqrt2 / 2.0));
  }
  Tensor res = make_result(a.shape(), std::move(out));
  return Tape::current().record("gelu", {a}, res, [a, res] {
    auto g = res.grad();
    auto av = a.values();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = av[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      ga[i] = g[i] * (cdf + x * pdf);
    }
    accumulate_grad(a, ga);
  });
}

Tensor sigmoid(const Tensor& a) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = av[i];
    out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  Tensor res = make_result(a.shape(), std::move(out));
  return Tape::current().record("sigmoid", {a}, res, [a, res] {
    auto g = res.grad();
    auto y = res.values();
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[i] * (1.0 - y[i]);
    accumulate_grad(a, ga);
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  Tensor res = make_result({}, {total});
  return Tape::current().record("sum", {a}, res, [a, res] {
    accumulate_grad(a, std::vector<double>(a.numel(), res.grad()[0]));
  });
}

Tensor sum(const Tensor& a, std::size_t axis) {
  check_axis("sum", a, axis);
  const auto s = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  auto av = a.values();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.n; ++j) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        out[o * s.inner + in] += av[(o * s.n + j) * s.inner + in];
      }
    }
  }
  Tensor res = make_result(std::move(out_shape), std::move(out));
  return Tape::current().record("sum", {a}, res, [a, res, s] {
    auto g = res.grad();
    std::vector<double> ga(a.numel());
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < s.n; ++j) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          ga[(o * s.n + j) * s.inner + in] = g[o * s.inner + in];
        }
      }
    }
    accumulate_grad(a, ga);
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  double total = 0.0;
  for (double v : a.values()) total += v;
  const double n = static_cast<double>(a.numel());
  Tensor res = make_result({}, {total / n});
  return Tape::current().record("mean", {a}, res, [a, res, n] {
    accumulate_grad(a, std::vector<double>(a.numel(), res.grad()[0] / n));
  });
}

Tensor mean(const Tensor& a, std::size_t axis) {
  check_axis("mean", a, axis);
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.dim(axis)));
}

Tensor scatter_add(const Tensor& target, const std::vector<std::size_t>& indices,
                   const Tensor& values) {
  if (target.rank() == 0 || values.rank() == 0) {
    shape_fail("scatter_add", target.shape(), values.shape(), "scalar operand");
  }
  if (values.dim(0) != indices.size() ||
      !std::equal(target.shape().begin() + 1, target.shape().end(), values.shape().begin() + 1,
                  values.shape().end())) {
    shape_fail("scatter_add", target.shape(), values.shape(),
               std::to_string(indices.size()) + " indices");
  }
  const std::size_t rows = target.dim(0);
  const std::size_t width = rows ? target.numel() / rows : 0;
  for (auto i : indices) {
    if (i >= rows) {
      throw ShapeError("scatter_add: index " + std::to_string(i) + " out of range for target " +
                       shape_str(target.shape()));
    }
  }
  std::vector<double> out(target.values().begin(), target.values().end());
  auto vv = values.values();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    double* dst = out.data() + indices[k] * width;
    const double* src = vv.data() + k * width;
    for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
  }
  Tensor res = make_result(target.shape(), std::move(out));
  return Tape::current().record("scatter_add", {target, values}, res,
                                [target, values, res, indices, width] {
                                  auto g = res.grad();
                                  accumulate_grad(target, g);
                                  if (values.requires_grad()) {
                                    std::vector<double> gv(values.numel());
                                    for (std::size_t k = 0; k < indices.size(); ++k) {
                                      std::copy_n(g.begin() + indices[k] * width, width,
                                                  gv.begin() + k * width);
                                    }
                                    accumulate_grad(values, gv);
                                  }
                                });
}

Tensor gather(const Tensor& a, const std::vector<std::size_t>& indices) {
  if (a.rank() == 0) throw ShapeError("gather: scalar input");
  const std::size_t rows = a.dim(0);
  const std::size_t width = rows ? a.numel() / rows : 0;
  Shape out_shape = a.shape();
  out_shape[0] = indices.size();
  std::vector<double> out(indices.size() * width);
  auto av = a.values();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= rows) {
      throw ShapeError("gather: index " + std::to_string(indices[k]) + " out of range for " +
                       shape_str(a.shape()));
    }
    std::copy_n(av.begin() + indices[k] * width, width, out.begin() + k * width);
  }
  Tensor res = make_result(std::move(out_shape), std::move(out));
  return Tape::current().record("gather", {a}, res, [a, res, indices, width] {
    auto g = res.grad();
    std::vector<double> ga(a.numel(), 0.0);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      double* dst = ga.data() + indices[k] * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += g[k * width + j];
    }
    accumulate_grad(a, ga);
  });
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  FiniteCheckGuard finite;
  Tape::current().clear();
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  Tensor y = f(probe);
  if (y.numel() != 1) throw ShapeError("grad_check: f must return a scalar");
  std::vector<double> analytic(x.numel(), 0.0);
  if (y.requires_grad()) {
    backward(y);
    if (probe.has_grad()) {
      auto g = probe.grad();
      analytic.assign(g.begin(), g.end());
    }
  }
  Tape::current().clear();

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    Tensor plus = x.clone();
    plus.mutable_values()[i] += eps;
    Tensor minus = x.clone();
    minus.mutable_values()[i] -= eps;
    const double numeric = (f(plus).item() - f(minus).item()) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace geomim
