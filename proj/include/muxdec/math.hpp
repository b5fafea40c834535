#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "muxdec/errors.hpp"

namespace muxdec {

inline bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

/// Dense row-major matrix, just enough for the toy substrate.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {a.data() + r * cols, cols}; }

  friend bool operator==(const Mat&, const Mat&) = default;
};

inline std::vector<double> matvec(const Mat& m, std::span<const double> x) {
  std::vector<double> y(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    double acc = 0.0;
    const double* row = m.a.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

/// Max-subtracted softmax; entries positive and summing to 1.
inline std::vector<double> softmax(std::span<const double> x) {
  if (x.empty()) throw InputError("softmax: empty vector");
  if (!all_finite(x)) throw InputError("softmax: non-finite entry");
  const double m = *std::max_element(x.begin(), x.end());
  std::vector<double> p(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    p[i] = std::exp(x[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

/// Shannon entropy in nats, with 0 * ln 0 = 0. exp(-entropy(p)) is the
/// reciprocal of the distribution's perplexity.
inline double entropy(std::span<const double> p) {
  if (p.empty()) throw InputError("entropy: empty vector");
  double sum = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) throw InputError("entropy: not a distribution (negative or non-finite entry)");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw InputError("entropy: not a distribution (sum != 1)");
  double s = 0.0;
  for (double v : p)
    if (v > 0.0) s -= v * std::log(v);
  return s;
}

/// Argmax with ties broken toward the lowest index.
inline std::size_t greedy_next(std::span<const double> logits) {
  if (logits.empty()) throw InputError("greedy_next: empty vector");
  if (!all_finite(logits)) throw InputError("greedy_next: non-finite entry");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

/// RMS-normalize in place-free form: x / sqrt(mean(x^2) + eps).
inline std::vector<double> rms_norm(std::span<const double> x, double eps = 1e-8) {
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(ms + eps);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * inv;
  return y;
}

}  // namespace muxdec
