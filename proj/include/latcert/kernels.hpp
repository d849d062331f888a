#pragma once

#include <span>

#include "latcert/tensor.hpp"

// Plain (untaped) layer kernels shared by the tape ops and the fast
// inference path. Shapes are validated by the callers.
namespace latcert::kernels {

/// out[o] = sum_i w[o, i] * x[i] + b[o]; pass an empty bias for none.
void affine(std::span<const double> x, const Tensor& w, std::span<const double> b,
            std::span<double> out) noexcept;

/// Same as affine with |w| and no bias.
void affine_abs(std::span<const double> x, const Tensor& w, std::span<double> out) noexcept;

/// Valid 1-D convolution. x is [len, c_in], w is [c_out, width, c_in],
/// out is [len - width + 1, c_out].
void conv1d(const Tensor& x, const Tensor& w, std::span<const double> b, Tensor& out) noexcept;
void conv1d_abs(const Tensor& x, const Tensor& w, Tensor& out) noexcept;

void relu(std::span<double> v) noexcept;

/// Averages the rows of a [len, c] tensor.
void mean_rows(const Tensor& x, std::span<double> out) noexcept;

/// Numerically stable log-softmax of a vector.
void log_softmax(std::span<const double> logits, std::span<double> out) noexcept;

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> v) noexcept;

}  // namespace latcert::kernels
