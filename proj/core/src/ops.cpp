#include "murel/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "murel/errors.hpp"

namespace murel {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(std::span<const double> s, std::size_t rows, std::size_t cols) {
  return ConstMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(std::span<double> s, std::size_t rows, std::size_t cols) {
  return MutMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

const char* op_name(ElementwiseOp op) {
  switch (op) {
    case ElementwiseOp::add: return "add";
    case ElementwiseOp::sub: return "sub";
    case ElementwiseOp::mul: return "mul";
    case ElementwiseOp::tanh: return "tanh";
    case ElementwiseOp::relu: return "relu";
    case ElementwiseOp::sigmoid: return "sigmoid";
  }
  return "?";
}

bool is_binary(ElementwiseOp op) {
  return op == ElementwiseOp::add || op == ElementwiseOp::sub || op == ElementwiseOp::mul;
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected a matrix, got shape " + shape_str(t.shape()));
  }
}

void check_mask(std::span<const std::uint8_t> mask, std::size_t rows, const char* what) {
  if (!mask.empty() && mask.size() != rows) {
    throw DimensionError(std::string(what) + ": mask has " + std::to_string(mask.size()) + " entries for " +
                         std::to_string(rows) + " rows");
  }
}

}  // namespace

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor* b) {
  const std::size_t n = a.size();
  if (!is_binary(op)) {
    if (b != nullptr) throw ContractError(std::string(op_name(op)) + " is unary");
    std::vector<double> out(n);
    auto x = a.data();
    switch (op) {
      case ElementwiseOp::tanh:
        for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
        break;
      case ElementwiseOp::relu:
        for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
        break;
      case ElementwiseOp::sigmoid:
        for (std::size_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
        break;
      default: break;
    }
    Tensor y(a.shape(), std::move(out));
    if (detail::needs_record({&a})) {
      detail::record(op_name(op), {a}, y, [a, y, op]() mutable {
        auto gy = y.grad();
        auto yv = y.data();
        auto xv = a.data();
        auto ga = a.grad_buffer();
        const std::size_t m = ga.size();
        switch (op) {
          case ElementwiseOp::tanh:
            for (std::size_t i = 0; i < m; ++i) ga[i] += gy[i] * (1.0 - yv[i] * yv[i]);
            break;
          case ElementwiseOp::relu:
            for (std::size_t i = 0; i < m; ++i) ga[i] += xv[i] > 0.0 ? gy[i] : 0.0;
            break;
          case ElementwiseOp::sigmoid:
            for (std::size_t i = 0; i < m; ++i) ga[i] += gy[i] * yv[i] * (1.0 - yv[i]);
            break;
          default: break;
        }
      });
    }
    return y;
  }

  if (b == nullptr) throw ContractError(std::string(op_name(op)) + " needs two operands");
  const bool same = a.shape() == b->shape();
  const bool trailing = !same && b->rank() == 1 && b->size() == a.shape().back();
  if (!same && !trailing) {
    throw DimensionError(std::string(op_name(op)) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b->shape()));
  }
  const std::size_t width = b->size();
  auto x = a.data();
  auto z = b->data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double bv = same ? z[i] : z[i % width];
    switch (op) {
      case ElementwiseOp::add: out[i] = x[i] + bv; break;
      case ElementwiseOp::sub: out[i] = x[i] - bv; break;
      case ElementwiseOp::mul: out[i] = x[i] * bv; break;
      default: break;
    }
  }
  Tensor y(a.shape(), std::move(out));
  Tensor bb = *b;
  if (detail::needs_record({&a, b})) {
    detail::record(op_name(op), {a, bb}, y, [a, bb, y, op, same, width]() mutable {
      auto gy = y.grad();
      const std::size_t m = gy.size();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        auto bv = bb.data();
        for (std::size_t i = 0; i < m; ++i) {
          ga[i] += op == ElementwiseOp::mul ? gy[i] * (same ? bv[i] : bv[i % width]) : gy[i];
        }
      }
      if (bb.requires_grad()) {
        auto gb = bb.grad_buffer();
        auto av = a.data();
        for (std::size_t i = 0; i < m; ++i) {
          const std::size_t j = same ? i : i % width;
          switch (op) {
            case ElementwiseOp::add: gb[j] += gy[i]; break;
            case ElementwiseOp::sub: gb[j] -= gy[i]; break;
            case ElementwiseOp::mul: gb[j] += gy[i] * av[i]; break;
            default: break;
          }
        }
      }
    });
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::add, a, &b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::sub, a, &b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::mul, a, &b); }
Tensor tanh(const Tensor& a) { return elementwise(ElementwiseOp::tanh, a); }
Tensor relu(const Tensor& a) { return elementwise(ElementwiseOp::relu, a); }
Tensor sigmoid(const Tensor& a) { return elementwise(ElementwiseOp::sigmoid, a); }

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  Tensor y(a.shape(), std::move(out));
  if (detail::needs_record({&a})) {
    detail::record("scale", {a}, y, [a, y, factor]() mutable {
      auto gy = y.grad();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * gy[i];
    });
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " . " +
                         shape_str(b.shape()));
  }
  Tensor c = Tensor::zeros({m, n});
  as_matrix(c.mutable_data(), m, n).noalias() = as_matrix(a.data(), m, k) * as_matrix(b.data(), k, n);
  if (detail::needs_record({&a, &b})) {
    detail::record("matmul", {a, b}, c, [a, b, c, m, k, n]() mutable {
      auto gc = as_matrix(c.grad(), m, n);
      if (a.requires_grad()) as_matrix(a.grad_buffer(), m, k).noalias() += gc * as_matrix(b.data(), k, n).transpose();
      if (b.requires_grad()) as_matrix(b.grad_buffer(), k, n).noalias() += as_matrix(a.data(), m, k).transpose() * gc;
    });
  }
  return c;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor y(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  if (detail::needs_record({&a})) {
    detail::record("reshape", {a}, y, [a, y]() mutable {
      auto gy = y.grad();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
    });
  }
  return y;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor y = Tensor::scalar(s);
  if (detail::needs_record({&a})) {
    detail::record("sum", {a}, y, [a, y]() mutable {
      const double g = y.grad()[0];
      for (auto& v : a.grad_buffer()) v += g;
    });
  }
  return y;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor repeat_rows(const Tensor& a, std::size_t times) {
  require_rank2(a, "repeat_rows");
  if (times == 0) throw DomainError("repeat_rows: zero repetitions");
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> out(n * times * d);
  auto x = a.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < times; ++t) {
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(i * d), d, out.begin() + static_cast<std::ptrdiff_t>((i * times + t) * d));
    }
  }
  Tensor y({n * times, d}, std::move(out));
  if (detail::needs_record({&a})) {
    detail::record("repeat_rows", {a}, y, [a, y, n, d, times]() mutable {
      auto gy = y.grad();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < times; ++t)
          for (std::size_t c = 0; c < d; ++c) ga[i * d + c] += gy[(i * times + t) * d + c];
    });
  }
  return y;
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require_rank2(table, "gather_rows");
  if (indices.empty()) throw DomainError("gather_rows: no indices");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<double> out(indices.size() * d);
  auto x = table.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= v) {
      throw IndexError("gather_rows: index " + std::to_string(indices[i]) + " out of range for " + std::to_string(v) +
                       " rows");
    }
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(indices[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  Tensor y({indices.size(), d}, std::move(out));
  if (detail::needs_record({&table})) {
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    detail::record("gather_rows", {table}, y, [table, y, idx = std::move(idx), d]() mutable {
      auto gy = y.grad();
      auto gt = table.grad_buffer();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) gt[idx[i] * d + c] += gy[i * d + c];
    });
  }
  return y;
}

Tensor rank_product(const Tensor& u, const Tensor& w, std::size_t rank) {
  require_rank2(u, "rank_product");
  require_rank2(w, "rank_product");
  if (rank == 0 || u.cols() % rank != 0) throw DimensionError("rank_product: width not divisible by rank");
  if (w.cols() != u.cols() || (w.rows() != u.rows() && w.rows() != 1)) {
    throw DimensionError("rank_product: incompatible shapes " + shape_str(u.shape()) + " and " + shape_str(w.shape()));
  }
  const std::size_t n = u.rows(), width = u.cols(), h = width / rank;
  const bool bcast = w.rows() == 1 && n != 1;
  std::vector<double> out(n * h, 0.0);
  auto uv = u.data();
  auto wv = w.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ur = uv.data() + i * width;
    const double* wr = wv.data() + (bcast ? 0 : i * width);
    double* o = out.data() + i * h;
    for (std::size_t r = 0; r < rank; ++r)
      for (std::size_t c = 0; c < h; ++c) o[c] += ur[r * h + c] * wr[r * h + c];
  }
  Tensor y({n, h}, std::move(out));
  if (detail::needs_record({&u, &w})) {
    detail::record("rank_product", {u, w}, y, [u, w, y, n, width, h, rank, bcast]() mutable {
      auto gy = y.grad();
      auto uv = u.data();
      auto wv = w.data();
      std::span<double> gu = u.requires_grad() ? u.grad_buffer() : std::span<double>{};
      std::span<double> gw = w.requires_grad() ? w.grad_buffer() : std::span<double>{};
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t wrow = bcast ? 0 : i * width;
        for (std::size_t r = 0; r < rank; ++r)
          for (std::size_t c = 0; c < h; ++c) {
            const double g = gy[i * h + c];
            if (!gu.empty()) gu[i * width + r * h + c] += g * wv[wrow + r * h + c];
            if (!gw.empty()) gw[wrow + r * h + c] += g * uv[i * width + r * h + c];
          }
      }
    });
  }
  return y;
}

Tensor pairwise_rank_product(const Tensor& u, const Tensor& w, std::size_t rank, std::size_t group) {
  require_rank2(u, "pairwise_rank_product");
  require_rank2(w, "pairwise_rank_product");
  if (u.shape() != w.shape()) {
    throw DimensionError("pairwise_rank_product: shapes differ " + shape_str(u.shape()) + " vs " + shape_str(w.shape()));
  }
  if (rank == 0 || u.cols() % rank != 0) throw DimensionError("pairwise_rank_product: width not divisible by rank");
  if (group == 0 || u.rows() % group != 0) throw DimensionError("pairwise_rank_product: rows not divisible by group");
  const std::size_t groups = u.rows() / group, width = u.cols(), h = width / rank;
  std::vector<double> out(groups * group * group * h, 0.0);
  auto uv = u.data();
  auto wv = w.data();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < group; ++i) {
      const double* ur = uv.data() + (g * group + i) * width;
      for (std::size_t j = 0; j < group; ++j) {
        const double* wr = wv.data() + (g * group + j) * width;
        double* o = out.data() + ((g * group + i) * group + j) * h;
        for (std::size_t r = 0; r < rank; ++r)
          for (std::size_t c = 0; c < h; ++c) o[c] += ur[r * h + c] * wr[r * h + c];
      }
    }
  Tensor y({groups * group * group, h}, std::move(out));
  if (detail::needs_record({&u, &w})) {
    detail::record("pairwise_rank_product", {u, w}, y, [u, w, y, groups, group, width, h, rank]() mutable {
      auto gy = y.grad();
      auto uv = u.data();
      auto wv = w.data();
      std::span<double> gu = u.requires_grad() ? u.grad_buffer() : std::span<double>{};
      std::span<double> gw = w.requires_grad() ? w.grad_buffer() : std::span<double>{};
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t i = 0; i < group; ++i) {
          const std::size_t ui = (g * group + i) * width;
          for (std::size_t j = 0; j < group; ++j) {
            const std::size_t wj = (g * group + j) * width;
            const double* go = gy.data() + ((g * group + i) * group + j) * h;
            for (std::size_t r = 0; r < rank; ++r)
              for (std::size_t c = 0; c < h; ++c) {
                if (!gu.empty()) gu[ui + r * h + c] += go[c] * wv[wj + r * h + c];
                if (!gw.empty()) gw[wj + r * h + c] += go[c] * uv[ui + r * h + c];
              }
          }
        }
    });
  }
  return y;
}

MaxResult segment_max(const Tensor& a, std::size_t group, std::span<const std::uint8_t> mask) {
  require_rank2(a, "segment_max");
  if (group == 0) throw DomainError("segment_max: empty reduction axis");
  if (a.rows() % group != 0) throw DimensionError("segment_max: rows not divisible by group");
  check_mask(mask, a.rows(), "segment_max");
  const std::size_t groups = a.rows() / group, d = a.cols();
  std::vector<double> out(groups * d, 0.0);
  std::vector<std::int32_t> arg(groups * d, -1);
  auto x = a.data();
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t i = 0; i < group; ++i) {
      const std::size_t row = g * group + i;
      if (!mask.empty() && mask[row] == 0) continue;
      for (std::size_t c = 0; c < d; ++c) {
        const double v = x[row * d + c];
        auto& best = arg[g * d + c];
        if (best < 0 || v > out[g * d + c]) {
          best = static_cast<std::int32_t>(i);
          out[g * d + c] = v;
        }
      }
    }
  }
  Tensor y({groups, d}, std::move(out));
  if (detail::needs_record({&a})) {
    detail::record("segment_max", {a}, y, [a, y, arg, group, groups, d]() mutable {
      auto gy = y.grad();
      auto ga = a.grad_buffer();
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t c = 0; c < d; ++c) {
          const auto i = arg[g * d + c];
          if (i >= 0) ga[(g * group + static_cast<std::size_t>(i)) * d + c] += gy[g * d + c];
        }
    });
  }
  return {std::move(y), std::move(arg)};
}

MaxResult reduce_max(const Tensor& a) {
  require_rank2(a, "reduce_max");
  auto r = segment_max(a, a.rows());
  r.values = reshape(r.values, {a.cols()});
  return r;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::size_t target) {
  std::size_t targets[1] = {target};
  return softmax_cross_entropy_mean(reshape(logits, {1, logits.size()}), targets);
}

Tensor softmax_cross_entropy_mean(const Tensor& logits, std::span<const std::size_t> targets) {
  require_rank2(logits, "softmax_cross_entropy");
  const std::size_t b = logits.rows(), c = logits.cols();
  if (targets.size() != b) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(b) + " rows");
  }
  auto x = logits.data();
  std::vector<double> probs(b * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (targets[i] >= c) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(targets[i]) + " out of range for " +
                       std::to_string(c) + " classes");
    }
    const double* row = x.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(row[k] - mx);
    const double logz = std::log(z) + mx;
    for (std::size_t k = 0; k < c; ++k) probs[i * c + k] = std::exp(row[k] - logz);
    loss += logz - row[targets[i]];
  }
  Tensor y = Tensor::scalar(loss / static_cast<double>(b));
  if (detail::needs_record({&logits})) {
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    detail::record("softmax_cross_entropy", {logits}, y,
                   [logits, y, probs = std::move(probs), tgt = std::move(tgt), b, c]() mutable {
                     const double g = y.grad()[0] / static_cast<double>(b);
                     auto gl = logits.grad_buffer();
                     for (std::size_t i = 0; i < b; ++i)
                       for (std::size_t k = 0; k < c; ++k)
                         gl[i * c + k] += g * (probs[i * c + k] - (k == tgt[i] ? 1.0 : 0.0));
                   });
  }
  return y;
}

Tensor segment_softmax(const Tensor& scores, std::size_t group, std::span<const std::uint8_t> mask) {
  require_rank2(scores, "segment_softmax");
  if (group == 0 || scores.rows() % group != 0) throw DimensionError("segment_softmax: rows not divisible by group");
  check_mask(mask, scores.rows(), "segment_softmax");
  const std::size_t groups = scores.rows() / group, hcount = scores.cols();
  auto x = scores.data();
  std::vector<double> out(x.size(), 0.0);
  auto valid = [&](std::size_t row) { return mask.empty() || mask[row] != 0; };
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t h = 0; h < hcount; ++h) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < group; ++i) {
        const std::size_t row = g * group + i;
        if (valid(row)) mx = std::max(mx, x[row * hcount + h]);
      }
      if (!std::isfinite(mx)) continue;
      double z = 0.0;
      for (std::size_t i = 0; i < group; ++i) {
        const std::size_t row = g * group + i;
        if (!valid(row)) continue;
        out[row * hcount + h] = std::exp(x[row * hcount + h] - mx);
        z += out[row * hcount + h];
      }
      for (std::size_t i = 0; i < group; ++i) out[(g * group + i) * hcount + h] /= z;
    }
  Tensor y(scores.shape(), std::move(out));
  if (detail::needs_record({&scores})) {
    detail::record("segment_softmax", {scores}, y, [scores, y, groups, group, hcount]() mutable {
      auto gy = y.grad();
      auto yv = y.data();
      auto gs = scores.grad_buffer();
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t h = 0; h < hcount; ++h) {
          double dot = 0.0;
          for (std::size_t i = 0; i < group; ++i) {
            const std::size_t k = (g * group + i) * hcount + h;
            dot += yv[k] * gy[k];
          }
          for (std::size_t i = 0; i < group; ++i) {
            const std::size_t k = (g * group + i) * hcount + h;
            gs[k] += yv[k] * (gy[k] - dot);
          }
        }
    });
  }
  return y;
}

Tensor segment_weighted_sum(const Tensor& weights, const Tensor& values, std::size_t group) {
  require_rank2(weights, "segment_weighted_sum");
  require_rank2(values, "segment_weighted_sum");
  if (weights.rows() != values.rows()) {
    throw DimensionError("segment_weighted_sum: row counts differ " + shape_str(weights.shape()) + " vs " +
                         shape_str(values.shape()));
  }
  if (group == 0 || weights.rows() % group != 0) throw DimensionError("segment_weighted_sum: rows not divisible by group");
  const std::size_t groups = weights.rows() / group, hcount = weights.cols(), d = values.cols();
  auto wv = weights.data();
  auto vv = values.data();
  std::vector<double> out(groups * hcount * d, 0.0);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < group; ++i) {
      const std::size_t row = g * group + i;
      for (std::size_t h = 0; h < hcount; ++h) {
        const double a = wv[row * hcount + h];
        double* o = out.data() + (g * hcount + h) * d;
        for (std::size_t c = 0; c < d; ++c) o[c] += a * vv[row * d + c];
      }
    }
  Tensor y({groups, hcount * d}, std::move(out));
  if (detail::needs_record({&weights, &values})) {
    detail::record("segment_weighted_sum", {weights, values}, y,
                   [weights, values, y, groups, group, hcount, d]() mutable {
                     auto gy = y.grad();
                     auto wv = weights.data();
                     auto vv = values.data();
                     std::span<double> gw = weights.requires_grad() ? weights.grad_buffer() : std::span<double>{};
                     std::span<double> gv = values.requires_grad() ? values.grad_buffer() : std::span<double>{};
                     for (std::size_t g = 0; g < groups; ++g)
                       for (std::size_t i = 0; i < group; ++i) {
                         const std::size_t row = g * group + i;
                         for (std::size_t h = 0; h < hcount; ++h) {
                           const double* go = gy.data() + (g * hcount + h) * d;
                           double acc = 0.0;
                           for (std::size_t c = 0; c < d; ++c) {
                             acc += go[c] * vv[row * d + c];
                             if (!gv.empty()) gv[row * d + c] += wv[row * hcount + h] * go[c];
                           }
                           if (!gw.empty()) gw[row * hcount + h] += acc;
                         }
                       }
                   });
  }
  return y;
}

}  // namespace murel
