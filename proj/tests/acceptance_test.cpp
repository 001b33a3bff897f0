// tests/acceptance_test.cpp
//
// End-to-end acceptance suite. Each criterion prints one pass/fail line with
// its measured numbers; the process exits non-zero if any criterion fails.
//
// The two training-trend criteria (ablation and conditioning) and the
// default-config training run are genuine toy reproductions: they train real
// models and check orderings, not absolute scores.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sepkit/cli.hpp"
#include "sepkit/datagen.hpp"
#include "sepkit/gradcheck.hpp"
#include "sepkit/losses.hpp"
#include "sepkit/metrics.hpp"
#include "sepkit/models.hpp"
#include "sepkit/training.hpp"

using namespace sepkit;

namespace {

struct Criterion {
  int id;
  std::string name;
  std::function<bool(std::ostream&)> run;
};

double median(std::vector<double> v) { return EvalReport::median_of(std::move(v)); }

std::vector<double> random_doubles(size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> out(n);
  for (double& x : out) x = rng.uniform(lo, hi);
  return out;
}

Waveform voice(std::uint64_t seed, double dur, int rate = 16000) {
  SpeakerProfile p;
  p.speaker_id = "v";
  p.f0_low_hz = 170.0 + 12.0 * static_cast<double>(seed % 6);
  p.f0_high_hz = p.f0_low_hz + 30.0;
  p.seed = seed;
  return synth_utterance(p, dur, rate, seed);
}

// ---------------------------------------------------------------------------
// shared toy corpora (built once, cleaned up at the end)

const char* kFullDir = "acceptance_full_data";
const char* kTrendDir = "acceptance_trend_data";

const DatasetManifest& full_manifest() {
  // 5 speakers, all 10 pairs, 20 mixtures each: 200 one-second mixtures
  static DatasetManifest m = generate_dataset(5, 20, 1.0, 16000, kFullDir, 42);
  return m;
}

const DatasetManifest& trend_manifest() {
  // 4 speakers, all 6 pairs, 5 mixtures each: 30 one-second mixtures
  static DatasetManifest m = generate_dataset(4, 5, 1.0, 16000, kTrendDir, 42);
  return m;
}

SeparatorConfig trend_model() {
  SeparatorConfig cfg;
  cfg.encoder_filters = 16;
  cfg.encoder_kernel = 16;
  cfg.masker_channels = 16;
  cfg.num_layers = 4;
  cfg.group_size = 2;
  cfg.embed_dim = 16;
  return cfg;
}

TrainConfig trend_train(std::uint64_t seed, size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 2;
  cfg.segment_seconds = 1.0;
  cfg.lr = 0.002;
  cfg.patience = epochs;  // no early stop inside the short trend runs
  cfg.seed = seed;
  // toy-scale perceptual weights; the embedding distances of the synthetic
  // corpus are ~1e2-1e3, so the default weights are far off scale here
  cfg.loss.lambda1 = 0.002;
  cfg.loss.lambda2 = 80.0;
  return cfg;
}

// full-corpus evaluation (no STOI): low-variance trend numbers
EvalReport eval_all(const std::function<std::vector<Waveform>(const Waveform&)>& sep,
                    const DatasetManifest& manifest, const std::string& name) {
  std::vector<size_t> all(manifest.entries.size());
  std::iota(all.begin(), all.end(), 0);
  return evaluate_separator(sep, manifest, all, name, /*with_stoi=*/false);
}

// ---------------------------------------------------------------------------

bool criterion_gradients(std::ostream& os) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = gradcheck::run_gradient_suite(20);
  const double dt =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool all = true;
  double worst = 0.0;
  for (const auto& r : results) {
    all = all && r.pass;
    worst = std::max(worst, r.max_rel_err / r.tolerance);
    if (!r.pass)
      os << "    failing op: " << r.name << " rel_err=" << r.max_rel_err << "\n";
  }
  os << "    " << results.size() << " checks, worst err at " << worst
     << "x tolerance, " << dt << " s";
  return all && dt < 60.0;
}

bool criterion_si_snr(std::ostream& os) {
  Rng rng(7);
  const Waveform ref(random_doubles(1600, rng), 16000);
  Waveform est = ref;
  for (double& v : est.samples) v += rng.uniform(-0.1, 0.1);

  const double base = si_snr(ref, est);
  double worst_dev = 0.0;
  for (double a : {0.5, 2.0}) {
    Waveform scaled = est;
    for (double& v : scaled.samples) v *= a;
    worst_dev = std::max(worst_dev, std::abs(si_snr(ref, scaled) - base));
  }

  const double zero_case = si_snr(Waveform({1.0, 0.0}, 8000), Waveform({1.0, 1.0}, 8000));
  const double self = si_snr(ref, ref);
  os << "    scale dev=" << worst_dev << ", unit-error case=" << zero_case
     << " dB, self=" << self << " dB";
  return worst_dev < 1e-9 && std::abs(zero_case) < 1e-9 && self >= 100.0;
}

bool criterion_upit(std::ostream& os) {
  // independent oracle with its own SI-SNR
  auto oracle_si_snr = [](const std::vector<double>& ref, const std::vector<double>& est) {
    const size_t n = ref.size();
    double mr = 0.0, me = 0.0;
    for (size_t i = 0; i < n; ++i) {
      mr += ref[i];
      me += est[i];
    }
    mr /= n;
    me /= n;
    double dot = 0.0, rr = 0.0;
    for (size_t i = 0; i < n; ++i) {
      dot += (est[i] - me) * (ref[i] - mr);
      rr += (ref[i] - mr) * (ref[i] - mr);
    }
    const double a = dot / rr;
    double s = 0.0, e = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double t = a * (ref[i] - mr);
      s += t * t;
      const double d = (est[i] - me) - t;
      e += d * d;
    }
    return 10.0 * std::log10((s + 1e-12) / (e + 1e-12));
  };

  size_t mismatches = 0;
  for (size_t c : {size_t{2}, size_t{3}}) {
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
      Rng rng(hash_combine(c, trial));
      std::vector<Waveform> tgts, ests;
      for (size_t i = 0; i < c; ++i)
        tgts.emplace_back(random_doubles(128, rng), 8000);
      for (size_t i = 0; i < c; ++i) {
        const size_t base = static_cast<size_t>(rng.uniform_int(0, c - 1));
        Waveform e = tgts[base];
        for (double& v : e.samples) v += rng.uniform(-0.3, 0.3);
        ests.push_back(std::move(e));
      }
      std::vector<size_t> perm(c), best;
      std::iota(perm.begin(), perm.end(), 0);
      double best_score = -1e300;
      do {
        double score = 0.0;
        for (size_t i = 0; i < c; ++i)
          score += oracle_si_snr(tgts[perm[i]].samples, ests[i].samples);
        if (score > best_score) {
          best_score = score;
          best = perm;
        }
      } while (std::next_permutation(perm.begin(), perm.end()));
      if (upit_assign(ests, tgts).permutation != best) ++mismatches;
    }
  }
  os << "    200 instances (100 each for C=2, C=3), " << mismatches << " mismatches";
  return mismatches == 0;
}

bool criterion_loss_algebra(std::ostream& os) {
  LossConfig cfg;
  cfg.lambda1 = 100.0;
  cfg.lambda2 = 0.001;
  cfg.alpha = 0.0035;
  const double ws =
      perc_weighted_sum(DiffTensor::scalar(0.01), DiffTensor::scalar(0.1), cfg).value();
  const double ws_expected = 1.0 + 0.001 / (0.1 + cfg.eps_inv);
  const bool ws_ok = std::abs(ws - ws_expected) < 1e-9;

  // hinge: zero whenever dist_neg >= dist_pos + alpha
  bool hinge_zero_ok = true;
  Rng rng(9);
  for (int k = 0; k < 50; ++k) {
    const double pos = rng.uniform(0.0, 1.0);
    const double neg = pos + cfg.alpha + rng.uniform(0.0, 1.0);
    hinge_zero_ok =
        hinge_zero_ok &&
        perc_triplet({DiffTensor::scalar(pos)}, {DiffTensor::scalar(neg)}, cfg).value() ==
            0.0;
  }
  const double hinge =
      perc_triplet({DiffTensor::scalar(0.01)}, {DiffTensor::scalar(0.005)}, cfg).value();
  const bool hinge_ok = std::abs(hinge - 0.0085) < 1e-12;
  os << "    weighted-sum=" << ws << " (expected " << ws_expected
     << "), hinge(0.01,0.005)=" << hinge;
  return ws_ok && hinge_zero_ok && hinge_ok;
}

bool criterion_film_identity(std::ostream& os) {
  SeparatorConfig cfg = trend_model();
  cfg.film_enabled = true;
  ParameterStore store;
  SeparatorModel model(cfg, store, 5);
  Rng rng(6);
  const DiffTensor mix =
      DiffTensor::from_values({1, 400}, random_doubles(400, rng, -0.5, 0.5));

  const auto plain = model.forward(mix);
  std::vector<FilmParams> identity;
  for (size_t s = 0; s < cfg.num_sources; ++s)
    identity.push_back(FilmParams::identity(cfg.num_groups(), cfg.masker_channels));
  const auto conditioned = model.forward(mix, identity);

  size_t diffs = 0;
  for (size_t s = 0; s < plain.size(); ++s)
    for (size_t i = 0; i < plain[s].numel(); ++i)
      if (plain[s].data()[i] != conditioned[s].data()[i]) ++diffs;
  os << "    " << plain.size() << " sources x " << plain[0].numel()
     << " samples, differing=" << diffs;
  return diffs == 0;
}

bool criterion_mixture_consistency(std::ostream& os) {
  // pre-quantization: exact mixing identity
  const auto profiles = default_speaker_profiles(3, 16000, 11);
  double worst_pre = 0.0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Waveform a = synth_utterance(profiles[0], 0.7, 16000, s);
    const Waveform b = synth_utterance(profiles[1], 0.7, 16000, 100 + s);
    const MixtureExample ex = make_mixture({a, b}, {"a", "b"});
    for (size_t i = 0; i < ex.mixture.size(); ++i)
      worst_pre = std::max(worst_pre, std::abs(ex.mixture.samples[i] -
                                               (a.samples[i] + b.samples[i])));
  }

  // post round-trip: every stored manifest entry within 2 LSB
  double worst_post = 0.0;
  for (const auto& e : trend_manifest().entries) {
    const Waveform mix = read_wav(e.mixture_path);
    const Waveform s0 = read_wav(e.source_paths[0]);
    const Waveform s1 = read_wav(e.source_paths[1]);
    for (size_t i = 0; i < mix.size(); ++i)
      worst_post = std::max(
          worst_post, std::abs(mix.samples[i] - (s0.samples[i] + s1.samples[i])));
  }
  os << "    pre-quantization err=" << worst_pre
     << ", post round-trip err=" << worst_post << " (bound "
     << 2.0 / 32768.0 << ")";
  return worst_pre < 1e-12 && worst_post <= 2.0 / 32768.0;
}

bool criterion_default_training(std::ostream& os) {
  const auto t0 = std::chrono::steady_clock::now();
  SeparatorConfig cfg;  // library defaults: 64 filters, kernel 32, 8 layers in 4-groups
  TrainConfig tcfg;
  tcfg.epochs = 8;  // well within the <= 30 budget; > 5 dB arrives by epoch 2-3
  tcfg.batch_size = 4;
  tcfg.segment_seconds = 1.0;  // the corpus is one-second utterances
  tcfg.lr = 0.001;
  tcfg.patience = 8;
  tcfg.seed = 1;
  RunReport report;
  train_basic(full_manifest(), cfg, tcfg, &report);
  const double dt =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  os << "    200 mixtures, stopped at epoch " << report.stopping_epoch
     << ", best val SI-SNRi=" << report.best_val_si_snri << " dB, wall=" << dt
     << " s";
  return report.best_val_si_snri > 5.0 && dt < 1800.0;
}

bool criterion_ablation_trend(std::ostream& os) {
  std::vector<double> leak_basic, leak_dneg, leak_both, snri_basic, snri_both;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto arms =
        run_ablation(trend_manifest(), trend_model(), trend_train(seed, 12));
    // batch order must be shared across arms (controlled comparison)
    for (size_t a = 1; a < arms.size(); ++a)
      if (arms[a].report.batch_hashes != arms[0].report.batch_hashes) {
        os << "    batch hashes differ between arms";
        return false;
      }
    std::vector<EvalReport> evals;
    for (const auto& arm : arms)
      evals.push_back(eval_all(
          [&](const Waveform& mix) { return arm.model.model->separate(mix); },
          trend_manifest(), arm.name));
    leak_basic.push_back(evals[0].mean_leakage);
    leak_dneg.push_back(evals[2].mean_leakage);
    leak_both.push_back(evals[3].mean_leakage);
    snri_basic.push_back(evals[0].mean_si_snri);
    snri_both.push_back(evals[3].mean_si_snri);
  }
  const double mb = median(leak_basic), mn = median(leak_dneg), mw = median(leak_both);
  const double sb = median(snri_basic), sw = median(snri_both);
  os << "    median leakage: basic=" << mb << " +dneg=" << mn << " +both=" << mw
     << " dB; median SI-SNRi: basic=" << sb << " +both=" << sw << " dB";
  return mn <= mb && mw <= mb && sw >= sb - 0.2;
}

bool criterion_conditioning_trend(std::ostream& os) {
  // stage-wise protocol: the pipeline embeds a trained basic model and
  // trains its conditioned separator on top of it
  TrainedEmbedder embedder = pretrain_si_embedder(trend_manifest(), 16, 15, 0.002, 5);
  if (embedder.holdout_accuracy < 0.9) {
    os << "    embedder holdout accuracy too low: " << embedder.holdout_accuracy;
    return false;
  }
  std::vector<double> snri_basic, snri_cond;
  for (std::uint64_t seed : {1, 2, 3}) {
    TrainConfig tcfg = trend_train(seed, 48);
    tcfg.batch_size = 1;
    tcfg.lr = 0.004;
    tcfg.patience = 10;
    RunReport rb;
    TrainedSeparator basic = train_basic(trend_manifest(), trend_model(), tcfg, &rb);
    const EvalReport eb = eval_all(
        [&](const Waveform& mix) { return basic.model->separate(mix); },
        trend_manifest(), "basic");
    TrainedEmbedder emb_copy = embedder;
    RunReport rc;
    ConditionedPipeline pipe =
        train_conditioned(trend_manifest(), trend_model(), tcfg, std::move(basic),
                          std::move(emb_copy), EmbeddingSource::oracle, &rc);
    const EvalReport ec = eval_all(
        [&](const Waveform& mix) { return pipe.separate(mix, 1); }, trend_manifest(),
        "conditioned");
    snri_basic.push_back(eb.mean_si_snri);
    snri_cond.push_back(ec.mean_si_snri);
  }
  const double mb = median(snri_basic), mc = median(snri_cond);
  os << "    median SI-SNRi: basic=" << mb << " dB, conditioned(oracle)=" << mc
     << " dB over 3 seeds";
  return mc >= mb;
}

bool criterion_stoi(std::ostream& os) {
  const Waveform x = voice(3, 2.0);
  const double self = stoi(x, x, 16000);

  const std::vector<double> snrs = {20.0, 15.0, 10.0, 5.0, 0.0};
  std::vector<std::vector<double>> scores(snrs.size());
  for (std::uint64_t sig = 0; sig < 10; ++sig) {
    const Waveform v = voice(20 + sig, 2.0);
    double energy = 0.0;
    for (double s : v.samples) energy += s * s;
    const double rms = std::sqrt(energy / static_cast<double>(v.size()));
    for (size_t k = 0; k < snrs.size(); ++k) {
      Rng rng(500 + sig);
      Waveform noisy = v;
      const double noise_rms = rms * std::pow(10.0, -snrs[k] / 20.0);
      for (double& s : noisy.samples) s += noise_rms * rng.normal();
      scores[k].push_back(stoi(v, noisy, 16000));
    }
  }
  std::vector<double> medians;
  for (auto& s : scores) medians.push_back(median(s));
  bool monotone = true;
  for (size_t k = 1; k < medians.size(); ++k)
    monotone = monotone && medians[k] < medians[k - 1];
  os << "    self=" << self << "; medians over SNR grid:";
  for (double m : medians) os << " " << m;
  return self >= 0.99 && monotone;
}

bool criterion_determinism(std::ostream& os) {
  auto run = []() {
    TrainConfig cfg = trend_train(77, 3);
    RunReport report;
    train_basic(trend_manifest(), trend_model(), cfg, &report);
    return report;
  };
  const RunReport a = run();
  const RunReport b = run();
  const bool same = a.train_loss == b.train_loss && a.val_si_snri == b.val_si_snri &&
                    a.batch_hashes == b.batch_hashes &&
                    a.final_eval.mean_si_snr == b.final_eval.mean_si_snr &&
                    a.final_eval.mean_stoi == b.final_eval.mean_stoi &&
                    a.final_eval.mean_leakage == b.final_eval.mean_leakage;
  os << "    two runs, seed 77: losses/metrics bitwise "
     << (same ? "identical" : "DIFFERENT");
  return same;
}

bool criterion_early_stopping(std::ostream& os) {
  TrainConfig cfg = trend_train(5, 20);
  cfg.lr = 0.0;  // frozen: validation plateaus immediately
  cfg.patience = 4;
  RunReport plateau;
  train_basic(trend_manifest(), trend_model(), cfg, &plateau);
  const bool stop_ok = plateau.stopping_epoch == 5 && plateau.best_epoch == 1 &&
                       plateau.val_si_snri.size() == 5;

  // best-checkpoint restoration, observed through re-evaluation
  TrainConfig lcfg = trend_train(6, 5);
  RunReport report;
  TrainedSeparator trained = train_basic(trend_manifest(), trend_model(), lcfg, &report);
  std::vector<size_t> tr, va;
  split_train_val(trend_manifest(), lcfg.val_fraction, tr, va);
  std::vector<TrainingItem> val_items;
  for (size_t i : va) val_items.push_back(load_entry(trend_manifest().entries[i]));
  const double returned = detail::validation_si_snri(
      [&](const Waveform& m) { return trained.model->separate(m); }, val_items);
  double best = -1e300;
  for (double v : report.val_si_snri) best = std::max(best, v);
  const bool restore_ok = returned == best;

  os << "    plateau stopped at epoch " << plateau.stopping_epoch << " (patience 4)"
     << "; restored checkpoint re-evaluates to " << returned << " (best " << best
     << ")";
  return stop_ok && restore_ok;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "gradient suite (finite differences, < 1 min)", criterion_gradients},
      {2, "SI-SNR properties", criterion_si_snr},
      {3, "uPIT oracle equivalence", criterion_upit},
      {4, "loss algebra (weighted-sum and hinge values)", criterion_loss_algebra},
      {5, "FiLM identity forward pass", criterion_film_identity},
      {6, "mixture consistency", criterion_mixture_consistency},
      {7, "default-config basic training > 5 dB SI-SNRi", criterion_default_training},
      {8, "ablation trend (leakage and SI-SNRi orderings)", criterion_ablation_trend},
      {9, "conditioning trend (oracle embeddings)", criterion_conditioning_trend},
      {10, "STOI sanity (self-score and noise monotonicity)", criterion_stoi},
      {11, "training determinism", criterion_determinism},
      {12, "early stopping and best-checkpoint restore", criterion_early_stopping},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    std::ostringstream detail;
    bool pass = false;
    std::string error;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      pass = c.run(detail);
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double dt =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %2d: %s (%.1f s)\n", pass ? "PASS" : "FAIL", c.id,
                c.name.c_str(), dt);
    if (!detail.str().empty()) std::printf("%s\n", detail.str().c_str());
    if (!error.empty()) std::printf("    exception: %s\n", error.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
  }

  std::filesystem::remove_all(kFullDir);
  std::filesystem::remove_all(kTrendDir);

  if (failures == 0) {
    std::printf("acceptance: all %zu criteria passed\n", criteria.size());
  } else {
    std::printf("acceptance: %d of %zu criteria FAILED\n", failures, criteria.size());
  }
  return failures == 0 ? 0 : 1;
}
