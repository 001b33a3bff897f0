// sepkit/metrics.hpp
//
// Objective evaluation: SI-SNR, SI-SNR improvement, STOI, and non-target
// leakage, plus the per-example evaluation report and its serializations
// (JSON-lines detail + CSV summary).

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sepkit/signals.hpp"

namespace sepkit {

inline constexpr double kSiSnrEps = 1e-12;

// Scale-invariant SNR in dB. Both signals are mean-centered, the estimate is
// projected onto the reference, and the energy ratio is epsilon-guarded.
inline double si_snr(const Waveform& reference, const Waveform& estimate) {
  if (reference.size() != estimate.size())
    throw std::invalid_argument("si_snr: length mismatch (" +
                                std::to_string(reference.size()) + " vs " +
                                std::to_string(estimate.size()) + ")");
  const size_t n = reference.size();
  if (n == 0) throw std::invalid_argument("si_snr: empty signals");
  double mr = 0.0, me = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mr += reference.samples[i];
    me += estimate.samples[i];
  }
  mr /= static_cast<double>(n);
  me /= static_cast<double>(n);
  double dot = 0.0, ref_energy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double r = reference.samples[i] - mr;
    const double e = estimate.samples[i] - me;
    dot += e * r;
    ref_energy += r * r;
  }
  if (ref_energy <= 1e-24)
    throw std::invalid_argument("si_snr: zero-energy reference");
  const double a = dot / ref_energy;
  double target_energy = 0.0, error_energy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double r = reference.samples[i] - mr;
    const double e = estimate.samples[i] - me;
    const double s = a * r;
    target_energy += s * s;
    const double err = e - s;
    error_energy += err * err;
  }
  return 10.0 * std::log10((target_energy + kSiSnrEps) / (error_energy + kSiSnrEps));
}

inline double si_snri(const Waveform& mixture, const Waveform& reference,
                      const Waveform& estimate) {
  return si_snr(reference, estimate) - si_snr(reference, mixture);
}

// SI-SNR of an estimate against a non-target clean source. Lower (more
// negative) means less of the non-target voice leaked into the estimate.
inline double leakage(const Waveform& estimate, const Waveform& nontarget_source) {
  return si_snr(nontarget_source, estimate);
}

// ---------------------------------------------------------------------------
// STOI

namespace detail {

// In-place iterative radix-2 FFT; n must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft: size must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

struct StoiConfig {
  static constexpr int fs = 10000;
  static constexpr size_t frame_len = 256;  // 25.6 ms
  static constexpr size_t hop = 128;        // 50% overlap
  static constexpr size_t fft_len = 512;
  static constexpr size_t num_bands = 15;
  static constexpr double min_center_hz = 150.0;
  static constexpr double dyn_range_db = 40.0;
  static constexpr size_t seg_frames = 30;  // 384 ms
  static constexpr double beta_db = -15.0;  // clipping bound
};

inline std::vector<double> stoi_window() {
  std::vector<double> w(StoiConfig::frame_len);
  const double n1 = static_cast<double>(StoiConfig::frame_len + 1);
  for (size_t k = 0; k < StoiConfig::frame_len; ++k)
    w[k] = 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(k + 1) / n1));
  return w;
}

// Drops frames whose clean-signal energy is more than dyn_range_db below the
// loudest frame; both signals keep the same frame set (overlap-add of the
// windowed frames).
inline void stoi_remove_silent(std::vector<double>& x, std::vector<double>& y) {
  const auto w = stoi_window();
  const size_t N = StoiConfig::frame_len, K = StoiConfig::hop;
  if (x.size() < N) throw std::invalid_argument("stoi: input too short");
  std::vector<size_t> starts;
  for (size_t s = 0; s + N <= x.size(); s += K) starts.push_back(s);
  std::vector<double> energy_db(starts.size());
  double max_db = -1e300;
  for (size_t j = 0; j < starts.size(); ++j) {
    double e = 0.0;
    for (size_t i = 0; i < N; ++i) {
      const double v = x[starts[j] + i] * w[i];
      e += v * v;
    }
    energy_db[j] = 10.0 * std::log10(e + 1e-300);
    max_db = std::max(max_db, energy_db[j]);
  }
  std::vector<size_t> kept;
  for (size_t j = 0; j < starts.size(); ++j)
    if (energy_db[j] > max_db - StoiConfig::dyn_range_db) kept.push_back(j);
  if (kept.empty()) throw std::invalid_argument("stoi: no active frames");
  std::vector<double> xs((kept.size() - 1) * K + N, 0.0);
  std::vector<double> ys(xs.size(), 0.0);
  for (size_t c = 0; c < kept.size(); ++c) {
    const size_t src = starts[kept[c]];
    const size_t dst = c * K;
    for (size_t i = 0; i < N; ++i) {
      xs[dst + i] += x[src + i] * w[i];
      ys[dst + i] += y[src + i] * w[i];
    }
  }
  x = std::move(xs);
  y = std::move(ys);
}

// One-third-octave band energies: rows = bands, cols = frames.
inline std::vector<std::vector<double>> stoi_band_energies(const std::vector<double>& x) {
  const auto w = stoi_window();
  const size_t N = StoiConfig::frame_len, K = StoiConfig::hop;
  const size_t half = StoiConfig::fft_len / 2;  // bins 0..256

  // band edge bins: centers 150 * 2^(k/3), edges center * 2^(±1/6), snapped
  // to the nearest FFT bin
  std::vector<size_t> lo_bin(StoiConfig::num_bands), hi_bin(StoiConfig::num_bands);
  for (size_t b = 0; b < StoiConfig::num_bands; ++b) {
    const double cf = StoiConfig::min_center_hz * std::pow(2.0, static_cast<double>(b) / 3.0);
    const double fl = cf * std::pow(2.0, -1.0 / 6.0);
    const double fr = cf * std::pow(2.0, 1.0 / 6.0);
    auto nearest_bin = [&](double f) {
      double best_d = 1e300;
      size_t best = 0;
      for (size_t i = 0; i <= half; ++i) {
        const double fb = static_cast<double>(i) * StoiConfig::fs / StoiConfig::fft_len;
        const double d = (fb - f) * (fb - f);
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      return best;
    };
    lo_bin[b] = nearest_bin(fl);
    hi_bin[b] = nearest_bin(fr);  // band covers [lo, hi)
  }

  std::vector<size_t> starts;
  for (size_t s = 0; s + N <= x.size(); s += K) starts.push_back(s);
  std::vector<std::vector<double>> bands(StoiConfig::num_bands,
                                         std::vector<double>(starts.size(), 0.0));
  std::vector<std::complex<double>> buf(StoiConfig::fft_len);
  for (size_t j = 0; j < starts.size(); ++j) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (size_t i = 0; i < N; ++i) buf[i] = x[starts[j] + i] * w[i];
    fft_radix2(buf);
    for (size_t b = 0; b < StoiConfig::num_bands; ++b) {
      double e = 0.0;
      for (size_t i = lo_bin[b]; i < hi_bin[b]; ++i) e += std::norm(buf[i]);
      bands[b][j] = std::sqrt(e);
    }
  }
  return bands;
}

}  // namespace detail

// Short-time objective intelligibility. Pipeline: resample to 10 kHz, remove
// silent frames (40 dB range on the reference), 25.6 ms / 50% overlap frames,
// 15 one-third-octave bands from 150 Hz, 384 ms segments with per-segment
// normalization and a -15 dB SDR clipping bound, mean of band/segment
// correlations.
inline double stoi(const Waveform& reference, const Waveform& estimate, int rate) {
  if (reference.size() != estimate.size())
    throw std::invalid_argument("stoi: length mismatch");
  if (rate <= 0) throw std::invalid_argument("stoi: bad sample rate");
  Waveform ref_in = reference;
  Waveform est_in = estimate;
  ref_in.sample_rate = rate;
  est_in.sample_rate = rate;
  std::vector<double> x = resample(ref_in, detail::StoiConfig::fs).samples;
  std::vector<double> y = resample(est_in, detail::StoiConfig::fs).samples;

  detail::stoi_remove_silent(x, y);
  const auto X = detail::stoi_band_energies(x);
  const auto Y = detail::stoi_band_energies(y);
  const size_t frames = X[0].size();
  const size_t N = detail::StoiConfig::seg_frames;
  if (frames < N) throw std::invalid_argument("stoi: input too short");

  const double clip = std::pow(10.0, -detail::StoiConfig::beta_db / 20.0);
  double acc = 0.0;
  size_t count = 0;
  std::vector<double> xs(N), ys(N);
  for (size_t m = N; m <= frames; ++m) {
    for (size_t b = 0; b < detail::StoiConfig::num_bands; ++b) {
      double ex = 0.0, ey = 0.0;
      for (size_t i = 0; i < N; ++i) {
        xs[i] = X[b][m - N + i];
        ys[i] = Y[b][m - N + i];
        ex += xs[i] * xs[i];
        ey += ys[i] * ys[i];
      }
      const double alpha = std::sqrt(ex / (ey + 1e-300));
      double mx = 0.0, my = 0.0;
      for (size_t i = 0; i < N; ++i) {
        ys[i] = std::min(ys[i] * alpha, xs[i] * (1.0 + clip));
        mx += xs[i];
        my += ys[i];
      }
      mx /= static_cast<double>(N);
      my /= static_cast<double>(N);
      double num = 0.0, dx = 0.0, dy = 0.0;
      for (size_t i = 0; i < N; ++i) {
        const double a = xs[i] - mx;
        const double bdev = ys[i] - my;
        num += a * bdev;
        dx += a * a;
        dy += bdev * bdev;
      }
      const double denom = std::sqrt(dx * dy);
      acc += denom > 1e-150 ? num / denom : 0.0;
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Evaluation report

struct EvalRow {
  size_t index = 0;
  double si_snr_db = 0.0;
  double si_snri_db = 0.0;
  double stoi_val = 0.0;
  std::vector<double> leakage_db;  // one entry per (source, non-target) pair
};

struct EvalReport {
  std::string model_name;
  std::vector<EvalRow> rows;
  double mean_si_snr = 0.0, median_si_snr = 0.0;
  double mean_si_snri = 0.0, median_si_snri = 0.0;
  double mean_stoi = 0.0, median_stoi = 0.0;
  double mean_leakage = 0.0, median_leakage = 0.0;

  static double mean_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  }

  static double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }

  void recompute_aggregates() {
    std::vector<double> snr, snri, st, leak;
    for (const auto& r : rows) {
      snr.push_back(r.si_snr_db);
      snri.push_back(r.si_snri_db);
      st.push_back(r.stoi_val);
      for (double l : r.leakage_db) leak.push_back(l);
    }
    mean_si_snr = mean_of(snr);
    median_si_snr = median_of(snr);
    mean_si_snri = mean_of(snri);
    median_si_snri = median_of(snri);
    mean_stoi = mean_of(st);
    median_stoi = median_of(st);
    mean_leakage = mean_of(leak);
    median_leakage = median_of(leak);
  }
};

inline void write_eval_jsonl(const EvalReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("eval report: cannot open for write: " + path);
  for (const auto& r : report.rows) {
    nlohmann::json j;
    j["idx"] = r.index;
    j["si_snr_db"] = r.si_snr_db;
    j["si_snri_db"] = r.si_snri_db;
    j["stoi"] = r.stoi_val;
    j["leakage_db"] = r.leakage_db;
    os << j.dump() << "\n";
  }
}

inline std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// Summary table: one row per model with columns model, si_snr_db, stoi.
inline void write_eval_summary_csv(const std::vector<EvalReport>& reports,
                                   const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("eval report: cannot open for write: " + path);
  os << "model,si_snr_db,stoi\n";
  for (const auto& r : reports)
    os << r.model_name << "," << format_fixed6(r.mean_si_snr) << ","
       << format_fixed6(r.mean_stoi) << "\n";
}

}  // namespace sepkit
