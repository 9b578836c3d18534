#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "growbrain/matrix.hpp"

namespace growbrain {

using Label = std::int32_t;

/// Fully connected layer. `weights` is n_out x (n_in + 1); the last column
/// holds the bias, so out[b] = weights * [h_in[b]; 1].
struct DenseParams {
  Matrix weights;

  std::size_t n_in() const noexcept { return weights.cols() == 0 ? 0 : weights.cols() - 1; }
  std::size_t n_out() const noexcept { return weights.rows(); }
};

struct DenseGrad {
  Matrix d_input;
  Matrix d_weights;
};

Matrix dense_forward(const DenseParams& p, const Matrix& h_in);
DenseGrad dense_backward(const DenseParams& p, const Matrix& h_in, const Matrix& d_out);

Matrix relu_apply(const Matrix& h);
/// Passes d_out where h > 0; the subgradient at exactly 0 is 0.
Matrix relu_backward(const Matrix& h, const Matrix& d_out);

inline constexpr double kNormScaleEpsilon = 1e-12;

/// Per-sample L2 normalization followed by a learned per-channel scale:
///   y_i = gamma_i * h_i / max(||h||_2, epsilon)
struct NormScaleParams {
  std::vector<double> gamma;
  double epsilon = kNormScaleEpsilon;

  /// All channels start at `rho`.
  static NormScaleParams uniform(std::size_t channels, double rho);
};

struct NormScaleGrad {
  Matrix d_input;
  std::vector<double> d_gamma;
};

Matrix normscale_forward(const NormScaleParams& p, const Matrix& h);
/// Samples whose norm is at or below epsilon get a zero input gradient.
NormScaleGrad normscale_backward(const NormScaleParams& p, const Matrix& h, const Matrix& d_out);

/// Column-wise concatenation in block order.
Matrix concat_forward(std::span<const Matrix* const> blocks);
std::vector<Matrix> concat_backward(const Matrix& d_out, std::span<const std::size_t> widths);

struct XentResult {
  double loss = 0.0;
  Matrix d_logits;
};

/// Mean cross-entropy of a max-shifted softmax; d_logits = (softmax - onehot) / batch.
XentResult softmax_xent(const Matrix& logits, std::span<const Label> labels);

/// Row-wise softmax probabilities.
Matrix softmax(const Matrix& logits);

}  // namespace growbrain
