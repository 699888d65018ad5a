#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "murel/tensor.hpp"

namespace murel {

enum class ElementwiseOp { add, sub, mul, tanh, relu, sigmoid };

/// Pointwise op. Binary ops take equal shapes, or `b` a vector matching a's last dimension.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor* b = nullptr);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor scale(const Tensor& a, double factor);

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& a, Shape shape);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Each row of `a` repeated `times` times consecutively: [n x d] -> [n*times x d].
Tensor repeat_rows(const Tensor& a, std::size_t times);

/// Rows of `table` selected by `indices`; backward scatters into the selected rows.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);

/// out[i, h] = sum_r u[i, r*H + h] * w[i', r*H + h], with i' = i, or 0 when w has one row.
Tensor rank_product(const Tensor& u, const Tensor& w, std::size_t rank);

/// Pairwise version over groups of `group` consecutive rows:
/// out[(g, i, j), h] = sum_r u[(g, i), r*H + h] * w[(g, j), r*H + h].
Tensor pairwise_rank_product(const Tensor& u, const Tensor& w, std::size_t rank, std::size_t group);

struct MaxResult {
  Tensor values;
  /// Per output coordinate, winning row offset inside its group; -1 when every row was masked.
  std::vector<std::int32_t> argmax;
};

/// Coordinatewise max over axis 0 of an [n x d] tensor -> values [d]. Lowest index wins ties.
MaxResult reduce_max(const Tensor& a);

/// Coordinatewise max over groups of `group` consecutive rows: [G*group x d] -> [G x d].
/// Rows with mask[row] == 0 are excluded; an all-masked group yields 0 with no gradient.
MaxResult segment_max(const Tensor& a, std::size_t group, std::span<const std::uint8_t> mask = {});

/// -log softmax(logits)[target] for a single logit vector.
Tensor softmax_cross_entropy(const Tensor& logits, std::size_t target);

/// Mean cross-entropy over the rows of [B x C] logits.
Tensor softmax_cross_entropy_mean(const Tensor& logits, std::span<const std::size_t> targets);

/// Softmax over each group of `group` rows, independently per column; masked rows get 0.
Tensor segment_softmax(const Tensor& scores, std::size_t group, std::span<const std::uint8_t> mask = {});

/// weights [G*group x H], values [G*group x D] -> [G x H*D], block h = sum_i weights[i,h] * values[i].
Tensor segment_weighted_sum(const Tensor& weights, const Tensor& values, std::size_t group);

}  // namespace murel
