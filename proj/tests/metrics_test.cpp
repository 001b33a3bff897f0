#include <catch2/catch.hpp>

#include <filesystem>
#include <fstream>

#include "sepkit/datagen.hpp"
#include "sepkit/metrics.hpp"
#include "support.hpp"

using namespace sepkit;

namespace {

Waveform noisy_copy(const Waveform& x, double noise_amp, std::uint64_t seed) {
  Rng rng(seed);
  Waveform out = x;
  for (double& v : out.samples) v += rng.uniform(-noise_amp, noise_amp);
  return out;
}

Waveform scaled(const Waveform& x, double a) {
  Waveform out = x;
  for (double& v : out.samples) v *= a;
  return out;
}

Waveform voice(std::uint64_t seed, double dur = 2.0) {
  SpeakerProfile p;
  p.speaker_id = "v";
  p.f0_low_hz = 180.0 + 10.0 * static_cast<double>(seed % 5);
  p.f0_high_hz = p.f0_low_hz + 30.0;
  p.seed = seed;
  return synth_utterance(p, dur, 16000, seed);
}

Waveform with_noise_at_snr(const Waveform& x, double snr_db, std::uint64_t seed) {
  double energy = 0.0;
  for (double v : x.samples) energy += v * v;
  const double rms = std::sqrt(energy / static_cast<double>(x.size()));
  const double noise_rms = rms * std::pow(10.0, -snr_db / 20.0);
  Rng rng(seed);
  Waveform out = x;
  for (double& v : out.samples) v += noise_rms * rng.normal();
  return out;
}

}  // namespace

TEST_CASE("si_snr is invariant to estimate scaling") {
  Rng rng(1);
  const Waveform ref = test_support::random_waveform(800, 16000, rng);
  const Waveform est = noisy_copy(ref, 0.05, 2);
  const double base = si_snr(ref, est);
  for (double a : {0.5, 2.0})
    REQUIRE(std::abs(si_snr(ref, scaled(est, a)) - base) < 1e-9);
}

TEST_CASE("si_snr of an orthogonal unit error is exactly 0 dB") {
  const Waveform ref({1.0, 0.0}, 8000);
  const Waveform est({1.0, 1.0}, 8000);
  REQUIRE(std::abs(si_snr(ref, est) - 0.0) < 1e-9);
}

TEST_CASE("si_snr hits 10 dB for a constructed orthogonal error") {
  // Gram-Schmidt: e zero-mean and orthogonal to the centered reference, with
  // ||ref0||^2 / ||e||^2 == 10
  Rng rng(3);
  const size_t n = 1000;
  std::vector<double> ref = test_support::random_values(n, rng);
  std::vector<double> v = test_support::random_values(n, rng);
  double mr = 0.0, mv = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mr += ref[i];
    mv += v[i];
  }
  mr /= n;
  mv /= n;
  std::vector<double> ref0(n), e(n);
  for (size_t i = 0; i < n; ++i) {
    ref0[i] = ref[i] - mr;
    e[i] = v[i] - mv;
  }
  double dot = 0.0, rr = 0.0;
  for (size_t i = 0; i < n; ++i) {
    dot += e[i] * ref0[i];
    rr += ref0[i] * ref0[i];
  }
  for (size_t i = 0; i < n; ++i) e[i] -= (dot / rr) * ref0[i];
  double ee = 0.0;
  for (size_t i = 0; i < n; ++i) ee += e[i] * e[i];
  const double target_ee = rr / 10.0;
  const double s = std::sqrt(target_ee / ee);
  std::vector<double> est(n);
  for (size_t i = 0; i < n; ++i) est[i] = ref[i] + s * e[i];

  REQUIRE(std::abs(si_snr(Waveform(ref, 16000), Waveform(est, 16000)) - 10.0) < 1e-6);
}

TEST_CASE("si_snr of a signal with itself exceeds 100 dB") {
  Rng rng(4);
  const Waveform x = test_support::random_waveform(1600, 16000, rng);
  REQUIRE(si_snr(x, x) >= 100.0);
}

TEST_CASE("si_snr error paths") {
  const Waveform a({1.0, 2.0}, 8000);
  const Waveform b({1.0, 2.0, 3.0}, 8000);
  REQUIRE_THROWS_AS(si_snr(a, b), std::invalid_argument);
  Rng rng(9);
  const Waveform est = test_support::random_waveform(100, 8000, rng);
  const Waveform zero(std::vector<double>(100, 0.0), 8000);
  REQUIRE_THROWS_AS(si_snr(zero, est), std::invalid_argument);
  // constant (zero after centering) reference also rejected
  const Waveform constant(std::vector<double>(100, 0.7), 8000);
  REQUIRE_THROWS_AS(si_snr(constant, est), std::invalid_argument);
}

TEST_CASE("si_snr is stable under joint time reversal") {
  Rng rng(5);
  const Waveform ref = test_support::random_waveform(600, 16000, rng);
  const Waveform est = noisy_copy(ref, 0.1, 6);
  Waveform ref_r = ref, est_r = est;
  std::reverse(ref_r.samples.begin(), ref_r.samples.end());
  std::reverse(est_r.samples.begin(), est_r.samples.end());
  REQUIRE(std::abs(si_snr(ref, est) - si_snr(ref_r, est_r)) < 1e-9);
}

TEST_CASE("si_snri basics") {
  Rng rng(7);
  const Waveform ref = voice(1);
  const Waveform other = voice(2);
  const MixtureExample mix = make_mixture({ref, other}, {"a", "b"});

  REQUIRE(std::abs(si_snri(mix.mixture, ref, mix.mixture)) < 1e-12);
  REQUIRE(si_snri(mix.mixture, ref, ref) >= 100.0);

  const Waveform est = noisy_copy(ref, 0.05, 8);
  const double base = si_snri(mix.mixture, ref, est);
  for (double a : {0.5, 2.0})
    REQUIRE(std::abs(si_snri(mix.mixture, ref, scaled(est, a)) - base) < 1e-9);
}

TEST_CASE("stoi self-score is at least 0.99") {
  const Waveform x = voice(10);
  const double d = stoi(x, x, x.sample_rate);
  REQUIRE(d >= 0.99);
  REQUIRE(d <= 1.0);
}

TEST_CASE("stoi decreases monotonically with additive noise") {
  const std::vector<double> snrs = {20.0, 15.0, 10.0, 5.0, 0.0};
  std::vector<std::vector<double>> scores(snrs.size());
  for (std::uint64_t sig = 0; sig < 10; ++sig) {
    const Waveform x = voice(20 + sig);
    for (size_t k = 0; k < snrs.size(); ++k)
      scores[k].push_back(stoi(x, with_noise_at_snr(x, snrs[k], 100 + sig), 16000));
  }
  std::vector<double> medians;
  for (auto& s : scores) medians.push_back(EvalReport::median_of(s));
  for (size_t k = 1; k < medians.size(); ++k) REQUIRE(medians[k] < medians[k - 1]);
}

TEST_CASE("stoi is invariant to estimate gain") {
  const Waveform x = voice(30);
  const double a = stoi(x, x, 16000);
  const double b = stoi(x, scaled(x, 2.0), 16000);
  REQUIRE(std::abs(a - b) < 1e-6);
}

TEST_CASE("stoi stays within [-1, 1] and rejects too-short input") {
  const Waveform x = voice(31);
  Rng rng(32);
  const Waveform junk = test_support::random_waveform(x.size(), 16000, rng);
  const double d = stoi(x, junk, 16000);
  REQUIRE(d >= -1.0);
  REQUIRE(d <= 1.0);

  const Waveform tiny(std::vector<double>(800, 0.1), 16000);  // 50 ms
  REQUIRE_THROWS_AS(stoi(tiny, tiny, 16000), std::invalid_argument);
}

TEST_CASE("leakage orders perfect, mixed and orthogonal estimates") {
  const Waveform a = voice(40);
  const Waveform b = voice(41);
  const MixtureExample mix = make_mixture({a, b}, {"a", "b"});

  const double leak_identical = leakage(b, b);      // estimate == non-target
  const double leak_mixture = leakage(mix.mixture, b);
  const double leak_target_only = leakage(a, b);    // estimate carries no b

  REQUIRE(leak_identical >= 100.0);
  REQUIRE(leak_mixture < leak_identical);
  REQUIRE(leak_mixture > leak_target_only);
  REQUIRE(leak_target_only < -10.0);
}

TEST_CASE("EvalReport aggregates are recomputable and serializable") {
  EvalReport report;
  report.model_name = "probe";
  for (size_t i = 0; i < 5; ++i) {
    EvalRow row;
    row.index = i;
    row.si_snr_db = static_cast<double>(i) + 0.5;
    row.si_snri_db = static_cast<double>(i);
    row.stoi_val = 0.9 - 0.01 * static_cast<double>(i);
    row.leakage_db = {-10.0 - static_cast<double>(i)};
    report.rows.push_back(row);
  }
  report.recompute_aggregates();
  REQUIRE(report.mean_si_snr == Approx(2.5));
  REQUIRE(report.median_si_snr == Approx(2.5));
  REQUIRE(report.mean_stoi == Approx(0.88));
  REQUIRE(report.median_leakage == Approx(-12.0));

  write_eval_jsonl(report, "metrics_rows.jsonl");
  write_eval_summary_csv({report}, "metrics_summary.csv");

  std::ifstream is("metrics_summary.csv");
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  REQUIRE(header == "model,si_snr_db,stoi");
  REQUIRE(row == "probe," + format_fixed6(report.mean_si_snr) + "," +
                     format_fixed6(report.mean_stoi));

  std::ifstream rows("metrics_rows.jsonl");
  std::string line;
  size_t count = 0;
  while (std::getline(rows, line))
    if (!line.empty()) ++count;
  REQUIRE(count == 5);
  std::remove("metrics_rows.jsonl");
  std::remove("metrics_summary.csv");
}
