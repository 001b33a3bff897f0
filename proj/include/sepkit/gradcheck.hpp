// sepkit/gradcheck.hpp
//
// Central finite-difference verification of every differentiable operation
// and of the end-to-end combined objective. The numeric side only ever calls
// the forward pass (two evaluations per coordinate), so it is independent of
// the backward implementation it checks.
//
// Error metric: |analytic - numeric| / max(1, |analytic|, |numeric|).

#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "sepkit/common.hpp"
#include "sepkit/losses.hpp"
#include "sepkit/models.hpp"
#include "sepkit/tensor.hpp"

namespace sepkit {
namespace gradcheck {

struct CheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 1e-5;
  bool pass = false;
};

inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({1.0, std::abs(a), std::abs(n)});
}

using InputSpec = std::pair<std::vector<size_t>, std::vector<double>>;
using Builder = std::function<DiffTensor(std::vector<DiffTensor>&)>;

// Compares backward() gradients against central differences of the forward
// pass. When max_coords_per_input > 0 only that many (deterministically
// chosen) coordinates per input are probed.
inline double max_grad_rel_error(const Builder& build, const std::vector<InputSpec>& base,
                                 double h = 1e-6, size_t max_coords_per_input = 0,
                                 std::uint64_t coord_seed = 17) {
  // analytic
  std::vector<DiffTensor> inputs;
  inputs.reserve(base.size());
  for (const auto& [shape, values] : base)
    inputs.push_back(DiffTensor::from_values(shape, values, /*requires_grad=*/true));
  DiffTensor loss = build(inputs);
  backward(loss);

  auto eval = [&](const std::vector<std::vector<double>>& values) {
    std::vector<DiffTensor> ins;
    ins.reserve(base.size());
    for (size_t i = 0; i < base.size(); ++i)
      ins.push_back(DiffTensor::from_values(base[i].first, values[i]));
    std::vector<DiffTensor> ins_copy = ins;
    return build(ins_copy).value();
  };

  std::vector<std::vector<double>> values;
  for (const auto& [shape, v] : base) values.push_back(v);

  double worst = 0.0;
  Rng coord_rng(coord_seed);
  for (size_t i = 0; i < base.size(); ++i) {
    const size_t n = values[i].size();
    std::vector<size_t> coords;
    if (max_coords_per_input == 0 || n <= max_coords_per_input) {
      coords.resize(n);
      for (size_t c = 0; c < n; ++c) coords[c] = c;
    } else {
      for (size_t c = 0; c < max_coords_per_input; ++c)
        coords.push_back(static_cast<size_t>(coord_rng.uniform_int(0, n - 1)));
    }
    for (size_t c : coords) {
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

namespace detail {

inline std::vector<double> random_values(size_t n, Rng& rng, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Dot with fixed random weights makes the scalar sensitive to every output
// coordinate (plain sum would hide sign errors that cancel).
inline DiffTensor weighted_sum_of(const DiffTensor& x, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(x, DiffTensor::from_values(x.shape(), random_values(x.numel(), rng))));
}

struct Check {
  std::string name;
  double tol;
  size_t seeds;
  std::function<double(std::uint64_t)> run;  // returns max rel err for one seed
};

inline std::vector<Check> build_checks() {
  std::vector<Check> checks;
  auto add_check = [&](std::string name, double tol, size_t seeds,
                       std::function<double(std::uint64_t)> run) {
    checks.push_back({std::move(name), tol, seeds, std::move(run)});
  };

  add_check("conv1d", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    InputSpec input{{4, 32}, random_values(4 * 32, rng)};
    InputSpec kernel{{8, 4, 3}, random_values(8 * 4 * 3, rng)};
    return max_grad_rel_error(
        [seed](std::vector<DiffTensor>& in) {
          return weighted_sum_of(conv1d(in[0], in[1], 1, 1, false), seed + 1);
        },
        {input, kernel});
  });

  add_check("conv1d_causal_dilated", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    InputSpec input{{3, 24}, random_values(3 * 24, rng)};
    InputSpec kernel{{5, 3, 3}, random_values(5 * 3 * 3, rng)};
    return max_grad_rel_error(
        [seed](std::vector<DiffTensor>& in) {
          return weighted_sum_of(conv1d(in[0], in[1], 1, 4, true), seed + 1);
        },
        {input, kernel});
  });

  add_check("conv1d_strided", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    InputSpec input{{2, 30}, random_values(2 * 30, rng)};
    InputSpec kernel{{6, 2, 8}, random_values(6 * 2 * 8, rng)};
    return max_grad_rel_error(
        [seed](std::vector<DiffTensor>& in) {
          return weighted_sum_of(conv1d(in[0], in[1], 4, 1, false), seed + 1);
        },
        {input, kernel});
  });

  add_check("conv_transpose1d", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    InputSpec input{{6, 9}, random_values(6 * 9, rng)};
    InputSpec kernel{{6, 2, 8}, random_values(6 * 2 * 8, rng)};
    return max_grad_rel_error(
        [seed](std::vector<DiffTensor>& in) {
          return weighted_sum_of(conv_transpose1d(in[0], in[1], 4), seed + 1);
        },
        {input, kernel});
  });

  add_check("add_sub_mul_div", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    InputSpec a{{3, 7}, random_values(21, rng)};
    InputSpec b{{3, 7}, random_values(21, rng, 0.5, 2.0)};
    InputSpec c{{1}, random_values(1, rng, 0.5, 2.0)};
    return max_grad_rel_error(
        [seed](std::vector<DiffTensor>& in) {
          const DiffTensor t = div(mul(add(in[0], in[1]), sub(in[0], in[2])), in[1]);
          return weighted_sum_of(t, seed + 1);
        },
        {a, b, c});
  });

  add_check("scale_add_const", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    InputSpec a{{11}, random_values(11, rng)};
    return max_grad_rel_error(
        [seed](std::vector<DiffTensor>& in) {
          return weighted_sum_of(add_const(scale(in[0], -2.5), 0.75), seed + 1);
        },
        {a});
  });

  add_check("activations", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    // keep relu inputs away from the kink
    std::vector<double> vals = random_values(16, rng, 0.1, 2.0);
    for (size_t i = 0; i < vals.size(); i += 2) vals[i] = -vals[i];
    InputSpec a{{16}, vals};
    return max_grad_rel_error(
        [seed](std::vector<DiffTensor>& in) {
          const DiffTensor r = add(add(relu(in[0]), sigmoid(in[0])), tanh(in[0]));
          return weighted_sum_of(r, seed + 1);
        },
        {a});
  });

  add_check("exp_log_sqrt_log1p", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    InputSpec a{{12}, random_values(12, rng, 0.2, 3.0)};
    return max_grad_rel_error(
        [seed](std::vector<DiffTensor>& in) {
          const DiffTensor r =
              add(add(exp(scale(in[0], 0.3)), log(in[0])), add(sqrt(in[0]), log1p(in[0])));
          return weighted_sum_of(r, seed + 1);
        },
        {a});
  });

  add_check("prelu", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> vals = random_values(14, rng, 0.1, 2.0);
    for (size_t i = 0; i < vals.size(); i += 2) vals[i] = -vals[i];
    InputSpec a{{14}, vals};
    InputSpec slope{{1}, {0.3}};
    return max_grad_rel_error(
        [seed](std::vector<DiffTensor>& in) {
          return weighted_sum_of(prelu(in[0], in[1]), seed + 1);
        },
        {a, slope});
  });

  add_check("matmul_transpose", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    InputSpec a{{4, 6}, random_values(24, rng)};
    InputSpec b{{6, 5}, random_values(30, rng)};
    InputSpec v{{4}, random_values(4, rng)};
    return max_grad_rel_error(
        [seed](std::vector<DiffTensor>& in) {
          // [4x6].[6x5] -> transpose -> [5x4] . [4] -> [5]
          return weighted_sum_of(matmul(transpose(matmul(in[0], in[1])), in[2]), seed + 1);
        },
        {a, b, v});
  });

  add_check("reductions", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    InputSpec a{{5, 6}, random_values(30, rng)};
    return max_grad_rel_error(
        [seed](std::vector<DiffTensor>& in) {
          DiffTensor r = add(weighted_sum_of(sum(in[0], 0), seed + 1),
                             weighted_sum_of(mean(in[0], 1), seed + 2));
          return add(r, add(sq_l2(in[0]), mean(in[0])));
        },
        {a});
  });

  add_check("frame_signal", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    InputSpec a{{40}, random_values(40, rng)};
    return max_grad_rel_error(
        [seed](std::vector<DiffTensor>& in) {
          return weighted_sum_of(frame_signal(in[0], 8, 4), seed + 1);
        },
        {a});
  });

  add_check("channel_norm_affine", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    InputSpec x{{6, 7}, random_values(42, rng)};
    InputSpec g{{6}, random_values(6, rng, 0.5, 1.5)};
    InputSpec b{{6}, random_values(6, rng)};
    return max_grad_rel_error(
        [seed](std::vector<DiffTensor>& in) {
          return weighted_sum_of(
              channel_add(channel_mul(channel_norm(in[0]), in[1]), in[2]), seed + 1);
        },
        {x, g, b});
  });

  add_check("fit_cols", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    InputSpec x{{3, 10}, random_values(30, rng)};
    return max_grad_rel_error(
        [seed](std::vector<DiffTensor>& in) {
          return add(weighted_sum_of(fit_cols(in[0], 7), seed + 1),
                     weighted_sum_of(fit_cols(in[0], 13), seed + 2));
        },
        {x});
  });

  add_check("si_snr_loss", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> target = random_values(24, rng);
    InputSpec est{{24}, random_values(24, rng)};
    return max_grad_rel_error(
        [target](std::vector<DiffTensor>& in) {
          return si_snr_t(Waveform(target, 8000), in[0]);
        },
        {est});
  });

  add_check("dist_pos_neg", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    const size_t m = 4, d = 5;
    std::vector<double> clean_a = random_values(m * d, rng);
    std::vector<double> clean_b = random_values(m * d, rng);
    InputSpec est_a{{m, d}, random_values(m * d, rng)};
    InputSpec est_b{{m, d}, random_values(m * d, rng)};
    return max_grad_rel_error(
        [clean_a, clean_b, m, d](std::vector<DiffTensor>& in) {
          EmbeddingSequence ca{DiffTensor::from_values({m, d}, clean_a), 160};
          EmbeddingSequence cb{DiffTensor::from_values({m, d}, clean_b), 160};
          EmbeddingSequence ea{in[0], 160};
          EmbeddingSequence eb{in[1], 160};
          return add(dist_pos(ca, ea), dist_neg(ca, {eb, ea}));
        },
        {est_a, est_b});
  });

  add_check("spectral_embed", 1e-4, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    SpectralEmbedder spec(8000, 64, 32, 8);
    InputSpec wave{{160}, random_values(160, rng, -0.5, 0.5)};
    return max_grad_rel_error(
        [&spec, seed](std::vector<DiffTensor>& in) {
          return weighted_sum_of(spec.embed(in[0]).features, seed + 1);
        },
        {wave});
  });

  // composite conv -> relu -> mean graph
  add_check("conv_relu_mean", 1e-5, 20, [](std::uint64_t seed) {
    Rng rng(seed);
    InputSpec input{{2, 20}, random_values(40, rng)};
    InputSpec kernel{{3, 2, 3}, random_values(18, rng)};
    return max_grad_rel_error(
        [](std::vector<DiffTensor>& in) {
          return mean(relu(conv1d(in[0], in[1], 1, 2, true)));
        },
        {input, kernel});
  });

  return checks;
}

// End-to-end checks on a tiny separator: gradients of the combined objective
// w.r.t. every model parameter (coordinate-subsampled for runtime).
inline CheckResult end_to_end_check(LossMode mode, size_t seeds) {
  CheckResult result;
  result.name = std::string("end_to_end_") + to_string(mode);
  result.tolerance = 1e-4;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    Rng rng(hash_combine(seed, 0xe2e));
    SeparatorConfig mcfg;
    mcfg.num_sources = 2;
    mcfg.encoder_filters = 8;
    mcfg.encoder_kernel = 8;
    mcfg.masker_channels = 8;
    mcfg.num_layers = 4;
    mcfg.group_size = 2;

    ParameterStore store;
    SeparatorModel model(mcfg, store, seed);
    SpectralEmbedder spec(8000, 64, 32, 8);

    const size_t t = 160;
    std::vector<double> mix_v = detail::random_values(t, rng, -0.5, 0.5);
    std::vector<Waveform> targets = {Waveform(detail::random_values(t, rng, -0.5, 0.5), 8000),
                                     Waveform(detail::random_values(t, rng, -0.5, 0.5), 8000)};
    LossConfig lcfg;
    lcfg.mode = mode;
    lcfg.lambda1 = 1.0;
    lcfg.lambda2 = 0.1;

    auto objective = [&]() {
      const DiffTensor mix_t = DiffTensor::from_values({1, t}, mix_v);
      const auto ests = model.forward(mix_t);
      const auto est_waves = SeparatorModel::to_waveforms(ests, 8000);
      const auto assign = upit_assign(est_waves, targets);
      const DiffTensor l_basic = si_snr_loss(ests, targets, assign);
      if (mode == LossMode::basic) return combined_loss(l_basic, std::nullopt, lcfg);
      std::vector<DiffTensor> pos_terms, neg_terms;
      std::vector<EmbeddingSequence> est_seq(2), clean_seq(2);
      for (size_t i = 0; i < 2; ++i) {
        est_seq[assign.permutation[i]] = spec.embed(ests[i]);
        clean_seq[i] = spec.embed(targets[i]);
      }
      for (size_t i = 0; i < 2; ++i) {
        pos_terms.push_back(dist_pos(clean_seq[i], est_seq[i]));
        neg_terms.push_back(dist_neg(clean_seq[i], {est_seq[1 - i]}));
      }
      return combined_loss(l_basic, perceptual_loss(pos_terms, neg_terms, lcfg), lcfg);
    };

    store.zero_grad();
    backward(objective());

    // probe a deterministic random subset of parameter coordinates
    const double h = 1e-6;
    Rng coord_rng(hash_combine(seed, 0xc0de));
    for (const auto& name : store.names()) {
      DiffTensor p = store.get(name);
      const size_t probes = std::min<size_t>(3, p.numel());
      for (size_t k = 0; k < probes; ++k) {
        const size_t c = static_cast<size_t>(coord_rng.uniform_int(0, p.numel() - 1));
        const double orig = p.data()[c];
        p.data()[c] = orig + h;
        const double fp = objective().value();
        p.data()[c] = orig - h;
        const double fm = objective().value();
        p.data()[c] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        worst = std::max(worst, rel_err(p.grad()[c], numeric));
      }
    }
  }
  result.max_rel_err = worst;
  result.pass = worst < result.tolerance;
  return result;
}

}  // namespace detail

inline std::vector<CheckResult> run_gradient_suite(size_t seeds = 20) {
  std::vector<CheckResult> results;
  for (const auto& check : detail::build_checks()) {
    CheckResult r;
    r.name = check.name;
    r.tolerance = check.tol;
    const size_t n = seeds > 0 ? seeds : check.seeds;
    for (std::uint64_t s = 1; s <= n; ++s)
      r.max_rel_err = std::max(r.max_rel_err, check.run(hash_combine(s, fnv1a(check.name))));
    r.pass = r.max_rel_err < r.tolerance;
    results.push_back(std::move(r));
  }
  results.push_back(detail::end_to_end_check(LossMode::basic, 3));
  results.push_back(detail::end_to_end_check(LossMode::weighted_sum, 3));
  results.push_back(detail::end_to_end_check(LossMode::triplet_like, 3));
  return results;
}

inline bool report(const std::vector<CheckResult>& results, std::ostream& os) {
  bool all = true;
  for (const auto& r : results) {
    os << (r.pass ? "[pass] " : "[FAIL] ") << r.name << "  max_rel_err=" << r.max_rel_err
       << " tol=" << r.tolerance << "\n";
    all = all && r.pass;
  }
  return all;
}

}  // namespace gradcheck
}  // namespace sepkit
