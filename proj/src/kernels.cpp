#include "latcert/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace latcert::kernels {

void affine(std::span<const double> x, const Tensor& w, std::span<const double> b,
            std::span<double> out) noexcept {
  const std::size_t rows = w.dim(0);
  const std::size_t cols = w.dim(1);
  const double* wp = w.data().data();
  for (std::size_t o = 0; o < rows; ++o) {
    double acc = b.empty() ? 0.0 : b[o];
    const double* row = wp + o * cols;
    for (std::size_t i = 0; i < cols; ++i) acc += row[i] * x[i];
    out[o] = acc;
  }
}

void affine_abs(std::span<const double> x, const Tensor& w, std::span<double> out) noexcept {
  const std::size_t rows = w.dim(0);
  const std::size_t cols = w.dim(1);
  const double* wp = w.data().data();
  for (std::size_t o = 0; o < rows; ++o) {
    double acc = 0.0;
    const double* row = wp + o * cols;
    for (std::size_t i = 0; i < cols; ++i) acc += std::abs(row[i]) * x[i];
    out[o] = acc;
  }
}

namespace {

template <bool Abs>
void conv_impl(const Tensor& x, const Tensor& w, std::span<const double> b, Tensor& out) noexcept {
  const std::size_t c_out = w.dim(0);
  const std::size_t width = w.dim(1);
  const std::size_t c_in = w.dim(2);
  const std::size_t steps = out.dim(0);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t o = 0; o < c_out; ++o) {
      double acc = b.empty() ? 0.0 : b[o];
      for (std::size_t k = 0; k < width; ++k) {
        const double* xr = x.data().data() + (t + k) * c_in;
        const double* wr = w.data().data() + (o * width + k) * c_in;
        for (std::size_t c = 0; c < c_in; ++c) {
          if constexpr (Abs) {
            acc += std::abs(wr[c]) * xr[c];
          } else {
            acc += wr[c] * xr[c];
          }
        }
      }
      out.at(t, o) = acc;
    }
  }
}

}  // namespace

void conv1d(const Tensor& x, const Tensor& w, std::span<const double> b, Tensor& out) noexcept {
  conv_impl<false>(x, w, b, out);
}

void conv1d_abs(const Tensor& x, const Tensor& w, Tensor& out) noexcept {
  conv_impl<true>(x, w, {}, out);
}

void relu(std::span<double> v) noexcept {
  for (double& e : v) e = e > 0.0 ? e : 0.0;
}

void mean_rows(const Tensor& x, std::span<double> out) noexcept {
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += x.at(r, c);
  }
  const double inv = 1.0 / static_cast<double>(rows);
  for (double& e : out) e *= inv;
}

void log_softmax(std::span<const double> logits, std::span<double> out) noexcept {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - peak);
  const double lse = peak + std::log(total);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

std::size_t argmax(std::span<const double> v) noexcept {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace latcert::kernels
