// sepkit/losses.hpp
//
// Training objectives: permutation-invariant SI-SNR loss, positive/negative
// embedding distances, their batch-collective means, the two perceptual-loss
// setups (weighted-sum and triplet-like hinge), and the combined objective.
//
// Index convention for the distances: i ranges over sources; "the estimate
// for source i" is the network output that the uPIT assignment matched to
// target i. dist_neg pairs clean source i against the estimates of every
// other source j != i.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sepkit/metrics.hpp"
#include "sepkit/models.hpp"
#include "sepkit/tensor.hpp"

namespace sepkit {

enum class LossMode { basic, pos_only, neg_only, weighted_sum, triplet_like };

inline const char* to_string(LossMode m) {
  switch (m) {
    case LossMode::basic: return "basic";
    case LossMode::pos_only: return "pos_only";
    case LossMode::neg_only: return "neg_only";
    case LossMode::weighted_sum: return "weighted_sum";
    case LossMode::triplet_like: return "triplet_like";
  }
  return "?";
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "basic") return LossMode::basic;
  if (s == "pos_only") return LossMode::pos_only;
  if (s == "neg_only") return LossMode::neg_only;
  if (s == "weighted_sum") return LossMode::weighted_sum;
  if (s == "triplet_like") return LossMode::triplet_like;
  throw std::invalid_argument("unknown loss mode '" + s + "'");
}

struct LossConfig {
  LossMode mode = LossMode::basic;
  double lambda_b = 1.0;   // basic-loss weight
  double lambda_p = 1.0;   // perceptual-loss weight
  double lambda1 = 100.0;  // positive-distance weight (weighted-sum setup)
  double lambda2 = 0.001;  // inverse-negative-distance weight
  double alpha = 0.0035;   // triplet margin
  double eps_inv = 1e-8;   // guards the 1/D_neg pole

  void validate() const {
    if (lambda_b < 0 || lambda_p < 0 || lambda1 < 0 || lambda2 < 0)
      throw std::invalid_argument("LossConfig: weights must be >= 0");
    if (alpha < 0) throw std::invalid_argument("LossConfig: alpha must be >= 0");
    if (eps_inv <= 0) throw std::invalid_argument("LossConfig: eps_inv must be > 0");
  }
};

// ---------------------------------------------------------------------------
// uPIT

struct PermutationAssignment {
  std::vector<size_t> permutation;  // estimate index -> target index
  std::vector<std::vector<double>> si_snr_matrix;  // [estimate][target]
  double best_mean_si_snr = 0.0;
};

// Exhaustive search over all C! assignments, maximizing the mean pairwise
// SI-SNR. Ties resolve to the lexicographically smallest permutation.
inline PermutationAssignment upit_assign(const std::vector<Waveform>& estimates,
                                         const std::vector<Waveform>& targets) {
  const size_t c = estimates.size();
  if (c == 0 || targets.size() != c)
    throw std::invalid_argument("upit_assign: estimate/target count mismatch");
  PermutationAssignment out;
  out.si_snr_matrix.assign(c, std::vector<double>(c, 0.0));
  for (size_t i = 0; i < c; ++i)
    for (size_t j = 0; j < c; ++j)
      out.si_snr_matrix[i][j] = si_snr(targets[j], estimates[i]);

  std::vector<size_t> perm(c);
  std::iota(perm.begin(), perm.end(), 0);
  double best = -1e300;
  std::vector<size_t> best_perm = perm;
  do {
    double mean = 0.0;
    for (size_t i = 0; i < c; ++i) mean += out.si_snr_matrix[i][perm[i]];
    mean /= static_cast<double>(c);
    if (mean > best) {  // strict: keeps the first (lexicographically smallest) tie
      best = mean;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  out.permutation = std::move(best_perm);
  out.best_mean_si_snr = best;
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable SI-SNR

// SI-SNR of a differentiable estimate against a fixed reference, same
// formula as metrics::si_snr (mean-centered, projected, epsilon-guarded).
inline DiffTensor si_snr_t(const Waveform& reference, const DiffTensor& estimate) {
  if (reference.size() != estimate.numel())
    throw std::invalid_argument("si_snr_t: length mismatch");
  const size_t n = reference.size();
  double mr = 0.0;
  for (double v : reference.samples) mr += v;
  mr /= static_cast<double>(n);
  std::vector<double> ref0(n);
  double ref_energy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ref0[i] = reference.samples[i] - mr;
    ref_energy += ref0[i] * ref0[i];
  }
  if (ref_energy <= 1e-24)
    throw std::invalid_argument("si_snr_t: zero-energy reference");
  const DiffTensor ref_c = DiffTensor::from_values(estimate.shape(), std::move(ref0));
  const DiffTensor est0 = sub(estimate, mean(estimate));
  const DiffTensor a = scale(sum(mul(est0, ref_c)), 1.0 / ref_energy);
  const DiffTensor s_t = mul(ref_c, a);
  const DiffTensor e = sub(est0, s_t);
  const DiffTensor ratio =
      div(add_const(sq_l2(s_t), kSiSnrEps), add_const(sq_l2(e), kSiSnrEps));
  return scale(log(ratio), 10.0 / std::log(10.0));
}

// L_basic: negative mean SI-SNR over uPIT-matched (target, estimate) pairs.
inline DiffTensor si_snr_loss(const std::vector<DiffTensor>& estimates,
                              const std::vector<Waveform>& targets,
                              const PermutationAssignment& assignment) {
  const size_t c = estimates.size();
  if (targets.size() != c || assignment.permutation.size() != c)
    throw std::invalid_argument("si_snr_loss: estimate/target/assignment mismatch");
  DiffTensor acc = DiffTensor::scalar(0.0);
  for (size_t i = 0; i < c; ++i)
    acc = add(acc, si_snr_t(targets[assignment.permutation[i]], estimates[i]));
  return scale(acc, -1.0 / static_cast<double>(c));
}

// ---------------------------------------------------------------------------
// Positive / negative distances

// sum_m (1/D) ||phi_m(clean) - phi_m(est)||^2 over the frame sequence.
inline DiffTensor dist_pos(const EmbeddingSequence& clean, const EmbeddingSequence& est) {
  if (clean.features.shape() != est.features.shape())
    throw std::invalid_argument("dist_pos: frame/dim mismatch");
  const double inv_d = 1.0 / static_cast<double>(clean.dim());
  return scale(sq_l2(sub(clean.features, est.features)), inv_d);
}

// sum over non-target estimates j != i of the same per-frame distance.
inline DiffTensor dist_neg(const EmbeddingSequence& clean_i,
                           const std::vector<EmbeddingSequence>& est_others) {
  if (est_others.empty())
    throw std::invalid_argument("dist_neg: empty non-target list");
  DiffTensor acc = DiffTensor::scalar(0.0);
  for (const auto& other : est_others) acc = add(acc, dist_pos(clean_i, other));
  return acc;
}

// Batch-collective distances: the per-minibatch means standing in for the
// training-set averages.
inline std::pair<DiffTensor, DiffTensor> batch_distances(
    const std::vector<DiffTensor>& pos_terms, const std::vector<DiffTensor>& neg_terms) {
  if (pos_terms.empty() || neg_terms.empty())
    throw std::invalid_argument("batch_distances: empty batch");
  DiffTensor p = DiffTensor::scalar(0.0);
  for (const auto& t : pos_terms) p = add(p, t);
  DiffTensor q = DiffTensor::scalar(0.0);
  for (const auto& t : neg_terms) q = add(q, t);
  return {scale(p, 1.0 / static_cast<double>(pos_terms.size())),
          scale(q, 1.0 / static_cast<double>(neg_terms.size()))};
}

// Weighted-sum perceptual loss: lambda1 * D_pos + lambda2 / (D_neg + eps).
inline DiffTensor perc_weighted_sum(const DiffTensor& d_pos, const DiffTensor& d_neg,
                                    const LossConfig& cfg) {
  return add(scale(d_pos, cfg.lambda1),
             div(DiffTensor::scalar(cfg.lambda2), add_const(d_neg, cfg.eps_inv)));
}

// Triplet-like perceptual loss: mean_i max(0, pos_i - neg_i + alpha); hinge
// subgradient at the kink is 0.
inline DiffTensor perc_triplet(const std::vector<DiffTensor>& pos_terms,
                               const std::vector<DiffTensor>& neg_terms,
                               const LossConfig& cfg) {
  if (pos_terms.empty() || pos_terms.size() != neg_terms.size())
    throw std::invalid_argument("perc_triplet: empty or mismatched batch");
  DiffTensor acc = DiffTensor::scalar(0.0);
  for (size_t i = 0; i < pos_terms.size(); ++i)
    acc = add(acc, relu(add_const(sub(pos_terms[i], neg_terms[i]), cfg.alpha)));
  return scale(acc, 1.0 / static_cast<double>(pos_terms.size()));
}

// Mode dispatch for the perceptual term of Eq-style combined training:
// pos_only / neg_only are the ablation arms that keep a single term.
inline DiffTensor perceptual_loss(const std::vector<DiffTensor>& pos_terms,
                                  const std::vector<DiffTensor>& neg_terms,
                                  const LossConfig& cfg) {
  switch (cfg.mode) {
    case LossMode::basic:
      throw std::invalid_argument("perceptual_loss: mode 'basic' has no perceptual term");
    case LossMode::pos_only: {
      auto [d_pos, d_neg] = batch_distances(pos_terms, pos_terms);
      (void)d_neg;
      return scale(d_pos, cfg.lambda1);
    }
    case LossMode::neg_only: {
      auto [d_pos, d_neg] = batch_distances(neg_terms, neg_terms);
      (void)d_pos;
      return div(DiffTensor::scalar(cfg.lambda2), add_const(d_neg, cfg.eps_inv));
    }
    case LossMode::weighted_sum: {
      auto [d_pos, d_neg] = batch_distances(pos_terms, neg_terms);
      return perc_weighted_sum(d_pos, d_neg, cfg);
    }
    case LossMode::triplet_like:
      return perc_triplet(pos_terms, neg_terms, cfg);
  }
  throw std::invalid_argument("perceptual_loss: unknown mode");
}

// lambda_b * L_basic + lambda_p * L_perc; mode 'basic' takes no perceptual
// term and every other mode requires one.
inline DiffTensor combined_loss(const DiffTensor& l_basic,
                                const std::optional<DiffTensor>& l_perc,
                                const LossConfig& cfg) {
  if (cfg.mode == LossMode::basic) {
    if (l_perc.has_value())
      throw std::invalid_argument("combined_loss: mode 'basic' with a perceptual term");
    return scale(l_basic, cfg.lambda_b);
  }
  if (!l_perc.has_value())
    throw std::invalid_argument("combined_loss: mode '" + std::string(to_string(cfg.mode)) +
                                "' requires a perceptual term");
  return add(scale(l_basic, cfg.lambda_b), scale(*l_perc, cfg.lambda_p));
}

}  // namespace sepkit
