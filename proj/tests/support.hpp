// tests/support.hpp
//
// Test-only oracles and helpers, kept independent of the implementation
// paths they check:
//  - central finite differences of the forward pass (gradient oracle)
//  - a naive O(n^2) DFT (spectral peak oracle)
//  - random tensor/waveform builders

#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "sepkit/common.hpp"
#include "sepkit/signals.hpp"
#include "sepkit/tensor.hpp"

namespace test_support {

inline std::vector<double> random_values(size_t n, sepkit::Rng& rng, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Gradient oracle: compares backward() against central differences of the
// forward-only scalar. `build` must construct the graph afresh from the given
// inputs on every call.
inline double max_grad_rel_error(
    const std::function<sepkit::DiffTensor(std::vector<sepkit::DiffTensor>&)>& build,
    const std::vector<std::pair<std::vector<size_t>, std::vector<double>>>& base,
    double h = 1e-6) {
  std::vector<sepkit::DiffTensor> inputs;
  for (const auto& [shape, values] : base)
    inputs.push_back(sepkit::DiffTensor::from_values(shape, values, true));
  std::vector<sepkit::DiffTensor> inputs_copy = inputs;
  sepkit::backward(build(inputs_copy));

  auto eval = [&](const std::vector<std::vector<double>>& values) {
    std::vector<sepkit::DiffTensor> ins;
    for (size_t i = 0; i < base.size(); ++i)
      ins.push_back(sepkit::DiffTensor::from_values(base[i].first, values[i]));
    return build(ins).value();
  };

  std::vector<std::vector<double>> values;
  for (const auto& [shape, v] : base) values.push_back(v);
  double worst = 0.0;
  for (size_t i = 0; i < base.size(); ++i) {
    for (size_t c = 0; c < values[i].size(); ++c) {
      const double orig = values[i][c];
      values[i][c] = orig + h;
      const double fp = eval(values);
      values[i][c] = orig - h;
      const double fm = eval(values);
      values[i][c] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, rel_err(inputs[i].grad()[c], numeric));
    }
  }
  return worst;
}

// Naive DFT magnitude at bin k over the full signal.
inline double dft_magnitude(const std::vector<double>& x, size_t k) {
  std::complex<double> acc(0.0, 0.0);
  const double w = -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(x.size());
  for (size_t n = 0; n < x.size(); ++n)
    acc += x[n] * std::complex<double>(std::cos(w * static_cast<double>(n)),
                                       std::sin(w * static_cast<double>(n)));
  return std::abs(acc);
}

// Frequency (Hz) of the strongest DFT bin.
inline double dominant_frequency_hz(const std::vector<double>& x, int sample_rate) {
  const size_t n = x.size();
  double best_mag = -1.0;
  size_t best_bin = 0;
  for (size_t k = 1; k < n / 2; ++k) {
    const double m = dft_magnitude(x, k);
    if (m > best_mag) {
      best_mag = m;
      best_bin = k;
    }
  }
  return static_cast<double>(best_bin) * sample_rate / static_cast<double>(n);
}

inline sepkit::Waveform random_waveform(size_t n, int rate, sepkit::Rng& rng,
                                        double amp = 0.5) {
  return sepkit::Waveform(random_values(n, rng, -amp, amp), rate);
}

}  // namespace test_support
