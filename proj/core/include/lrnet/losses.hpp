#pragma once

#include "lrnet/tensor.hpp"

namespace lrnet {

/// -log softmax(logits)[label], computed with max subtraction.
double cross_entropy_loss(const Tensor& logits, int label);

Tensor softmax(const Tensor& logits);

/// Classification / test loss heads. The non-cross-entropy heads exist for
/// closed-form fixtures: squared_error is 0.5*||logits - target||^2, sum and
/// sum_squares reduce the logits directly, constant ignores everything.
enum class LossKind { cross_entropy, squared_error, sum, sum_squares, constant };

double head_loss(LossKind kind, const Tensor& logits, int label, const Tensor* target,
                 double constant_value);
Tensor head_loss_grad(LossKind kind, const Tensor& logits, int label, const Tensor* target);

}  // namespace lrnet
