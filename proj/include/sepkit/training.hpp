// sepkit/training.hpp
//
// Training loops: the basic separator under any of the five loss modes, the
// speaker-identification embedder pretraining, the two-stage conditioned
// pipeline (frozen basic model -> frozen embedder -> FiLM generator +
// conditioned separator trained jointly), recurrent refinement, evaluation,
// and the four-arm ablation runner.
//
// Determinism contract: with a fixed seed and single-threaded execution all
// parameter trajectories and reported metrics are bit-identical. Randomness
// flows only through Rng seeded from the config.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sepkit/common.hpp"
#include "sepkit/datagen.hpp"
#include "sepkit/losses.hpp"
#include "sepkit/metrics.hpp"
#include "sepkit/models.hpp"
#include "sepkit/optim.hpp"
#include "sepkit/signals.hpp"

namespace sepkit {

struct TrainConfig {
  size_t epochs = 30;
  size_t batch_size = 4;
  double segment_seconds = 3.0;
  double lr = 0.001;  // 0 freezes parameters (plateau construction for tests)
  size_t patience = 10;
  std::uint64_t seed = 1;
  LossConfig loss;
  size_t refinement_iters = 0;  // R; 0 = no recurrent refinement
  double val_fraction = 0.1;
  // stage-3 robustness: perturb conditioning embeddings during training so
  // the conditioned masker tolerates the embedding drift of the recurrent
  // refinement loop; 0 trains on the exact stage-2 embeddings
  double conditioning_noise = 0.0;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size >= 1");
    if (segment_seconds <= 0)
      throw std::invalid_argument("TrainConfig: segment_seconds > 0");
    if (lr < 0) throw std::invalid_argument("TrainConfig: lr >= 0");
    if (patience < 1) throw std::invalid_argument("TrainConfig: patience >= 1");
    if (val_fraction <= 0 || val_fraction >= 1)
      throw std::invalid_argument("TrainConfig: val_fraction in (0, 1)");
    if (conditioning_noise < 0)
      throw std::invalid_argument("TrainConfig: conditioning_noise >= 0");
    loss.validate();
  }
};

struct RunReport {
  std::vector<double> train_loss;    // per epoch
  std::vector<double> val_si_snri;   // per epoch, dB
  size_t stopping_epoch = 0;
  size_t best_epoch = 0;
  double best_val_si_snri = 0.0;
  EvalReport final_eval;
  std::string config_echo;
  std::vector<std::string> batch_hashes;  // one per epoch, over the item order
  double wall_time_s = 0.0;
};

// One training example (a mixture segment with its aligned source segments).
struct TrainingItem {
  Waveform mixture;
  std::vector<Waveform> sources;
  std::vector<std::string> speaker_ids;
};

struct TrainedSeparator {
  SeparatorConfig config;
  std::shared_ptr<ParameterStore> store;
  std::shared_ptr<SeparatorModel> model;
};

struct TrainedEmbedder {
  std::shared_ptr<const SpectralEmbedder> spectral;
  std::shared_ptr<ParameterStore> store;
  std::shared_ptr<SiEmbedder> model;
  std::vector<std::string> speakers;  // classification label order
  double holdout_accuracy = 0.0;
};

enum class EmbeddingSource { model, oracle };

// ---------------------------------------------------------------------------
// Data loading and splits

inline TrainingItem load_entry(const ManifestEntry& entry) {
  TrainingItem item;
  item.mixture = read_wav(entry.mixture_path);
  for (const auto& p : entry.source_paths) item.sources.push_back(read_wav(p));
  item.speaker_ids = entry.speaker_ids;
  return item;
}

// Deterministic split: entries ordered by path hash, smallest `val_fraction`
// (at least one) go to validation.
inline void split_train_val(const DatasetManifest& manifest, double val_fraction,
                            std::vector<size_t>& train_idx,
                            std::vector<size_t>& val_idx) {
  const size_t n = manifest.entries.size();
  if (n < 2) throw std::invalid_argument("split_train_val: need at least 2 entries");
  std::vector<std::pair<std::uint64_t, size_t>> order;
  order.reserve(n);
  for (size_t i = 0; i < n; ++i)
    order.emplace_back(fnv1a(manifest.entries[i].mixture_path), i);
  std::sort(order.begin(), order.end());
  size_t val_count = static_cast<size_t>(std::llround(val_fraction * static_cast<double>(n)));
  val_count = std::max<size_t>(1, std::min(val_count, n - 1));
  train_idx.clear();
  val_idx.clear();
  for (size_t k = 0; k < n; ++k)
    (k < val_count ? val_idx : train_idx).push_back(order[k].second);
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
}

inline std::vector<TrainingItem> segment_items(const std::vector<TrainingItem>& whole,
                                               double segment_seconds) {
  std::vector<TrainingItem> out;
  for (const auto& item : whole) {
    const auto mix_segs = segment(item.mixture, segment_seconds);
    std::vector<std::vector<AudioSegment>> src_segs;
    for (const auto& s : item.sources) src_segs.push_back(segment(s, segment_seconds));
    for (size_t k = 0; k < mix_segs.size(); ++k) {
      TrainingItem seg_item;
      seg_item.mixture = mix_segs[k].waveform;
      for (const auto& ss : src_segs) seg_item.sources.push_back(ss[k].waveform);
      seg_item.speaker_ids = item.speaker_ids;
      out.push_back(std::move(seg_item));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

// Evaluates a separation callable over manifest entries: uPIT-aligned
// SI-SNR / SI-SNRi / STOI per source plus leakage against every non-target.
inline EvalReport evaluate_separator(
    const std::function<std::vector<Waveform>(const Waveform&)>& separate,
    const DatasetManifest& manifest, const std::vector<size_t>& entry_indices,
    const std::string& model_name, bool with_stoi = true) {
  EvalReport report;
  report.model_name = model_name;
  report.rows.resize(entry_indices.size());
  parallel_for(entry_indices.size(), [&](size_t k) {
    const TrainingItem item = load_entry(manifest.entries[entry_indices[k]]);
    const auto ests = separate(item.mixture);
    const auto assign = upit_assign(ests, item.sources);
    const size_t c = ests.size();
    EvalRow row;
    row.index = entry_indices[k];
    double snr = 0.0, snri = 0.0, st = 0.0;
    for (size_t i = 0; i < c; ++i) {
      const Waveform& ref = item.sources[assign.permutation[i]];
      snr += si_snr(ref, ests[i]);
      snri += si_snri(item.mixture, ref, ests[i]);
      if (with_stoi) st += stoi(ref, ests[i], ref.sample_rate);
      for (size_t j = 0; j < c; ++j) {
        if (assign.permutation[j] == assign.permutation[i]) continue;
        row.leakage_db.push_back(leakage(ests[i], item.sources[assign.permutation[j]]));
      }
    }
    row.si_snr_db = snr / static_cast<double>(c);
    row.si_snri_db = snri / static_cast<double>(c);
    row.stoi_val = with_stoi ? st / static_cast<double>(c) : 0.0;
    report.rows[k] = std::move(row);
  });
  report.recompute_aggregates();
  return report;
}

namespace detail {

inline double validation_si_snri(
    const std::function<std::vector<Waveform>(const Waveform&)>& separate,
    const std::vector<TrainingItem>& val_items) {
  double acc = 0.0;
  for (const auto& item : val_items) {
    const auto ests = separate(item.mixture);
    const auto assign = upit_assign(ests, item.sources);
    double snri = 0.0;
    for (size_t i = 0; i < ests.size(); ++i) {
      const Waveform& ref = item.sources[assign.permutation[i]];
      snri += si_snri(item.mixture, ref, ests[i]);
    }
    acc += snri / static_cast<double>(ests.size());
  }
  return acc / static_cast<double>(val_items.size());
}

inline std::string hash_order(const std::vector<size_t>& order) {
  std::string bytes;
  bytes.reserve(order.size() * 8);
  for (size_t v : order)
    for (int b = 0; b < 8; ++b)
      bytes.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
  return to_hex(fnv1a(bytes));
}

// Divergence guard: a non-finite loss aborts the run with a diagnostic
// instead of silently training on garbage.
inline void check_finite_loss(double value, const char* trainer, size_t epoch) {
  if (!std::isfinite(value))
    throw std::runtime_error(std::string(trainer) + ": non-finite loss (" +
                             std::to_string(value) + ") at epoch " +
                             std::to_string(epoch) + " (diverged)");
}

// Early-stopping bookkeeping: "improved" means strictly greater validation
// score; training halts after `patience` consecutive non-improving epochs.
class EarlyStopper {
 public:
  explicit EarlyStopper(size_t patience) : patience_(patience) {}

  // returns true if this epoch improved the best score
  bool observe(double score) {
    if (score > best_) {
      best_ = score;
      bad_ = 0;
      return true;
    }
    ++bad_;
    return false;
  }

  bool should_stop() const { return bad_ >= patience_; }
  double best() const { return best_; }

 private:
  size_t patience_;
  size_t bad_ = 0;
  double best_ = -1e300;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Basic training (all five loss modes)

inline TrainedSeparator train_basic(const DatasetManifest& manifest,
                                    const SeparatorConfig& mcfg, const TrainConfig& tcfg,
                                    RunReport* report_out = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  mcfg.validate();
  tcfg.validate();
  if (manifest.entries.empty()) throw std::invalid_argument("train_basic: empty manifest");

  std::vector<size_t> train_idx, val_idx;
  split_train_val(manifest, tcfg.val_fraction, train_idx, val_idx);
  std::vector<TrainingItem> train_whole, val_items;
  for (size_t i : train_idx) train_whole.push_back(load_entry(manifest.entries[i]));
  for (size_t i : val_idx) val_items.push_back(load_entry(manifest.entries[i]));
  std::vector<TrainingItem> items = segment_items(train_whole, tcfg.segment_seconds);
  if (items.empty())
    throw std::invalid_argument(
        "train_basic: no training items (segment_seconds longer than utterances?)");

  TrainedSeparator trained;
  trained.config = mcfg;
  trained.store = std::make_shared<ParameterStore>();
  trained.model = std::make_shared<SeparatorModel>(mcfg, *trained.store, tcfg.seed);

  const bool perceptual = tcfg.loss.mode != LossMode::basic;
  std::shared_ptr<SpectralEmbedder> spec;
  // clean-source embeddings are constants; cache them per item and source
  std::vector<std::vector<EmbeddingSequence>> clean_seq(items.size());
  if (perceptual) {
    spec = std::make_shared<SpectralEmbedder>(manifest.sample_rate);
    for (size_t k = 0; k < items.size(); ++k)
      for (const auto& src : items[k].sources)
        clean_seq[k].push_back(spec->embed(src));
  }

  RunReport report;
  detail::EarlyStopper stopper(tcfg.patience);
  std::map<std::string, std::vector<double>> best_values = trained.store->export_values();
  auto separate_fn = [&](const Waveform& mix) { return trained.model->separate(mix); };

  std::vector<size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  size_t epoch = 0;
  for (epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    Rng shuffle_rng(hash_combine(tcfg.seed, hash_combine(0xe90c, epoch)));
    shuffle_rng.shuffle(order);
    report.batch_hashes.push_back(detail::hash_order(order));

    double loss_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += tcfg.batch_size) {
      const size_t stop = std::min(order.size(), start + tcfg.batch_size);
      std::vector<DiffTensor> basic_terms, pos_terms, neg_terms;
      for (size_t bi = start; bi < stop; ++bi) {
        const TrainingItem& item = items[order[bi]];
        const DiffTensor mix_t = SeparatorModel::as_input(item.mixture);
        const auto ests = trained.model->forward(mix_t);
        const auto est_waves =
            SeparatorModel::to_waveforms(ests, item.mixture.sample_rate);
        const auto assign = upit_assign(est_waves, item.sources);
        basic_terms.push_back(si_snr_loss(ests, item.sources, assign));
        if (perceptual) {
          const size_t c = ests.size();
          // reindex estimates by target: est_for_target[pi(i)] = est_i
          std::vector<EmbeddingSequence> est_seq(c);
          for (size_t i = 0; i < c; ++i)
            est_seq[assign.permutation[i]] = spec->embed(ests[i]);
          const auto& cseq = clean_seq[order[bi]];
          for (size_t i = 0; i < c; ++i) {
            pos_terms.push_back(dist_pos(cseq[i], est_seq[i]));
            std::vector<EmbeddingSequence> others;
            for (size_t j = 0; j < c; ++j)
              if (j != i) others.push_back(est_seq[j]);
            neg_terms.push_back(dist_neg(cseq[i], others));
          }
        }
      }
      DiffTensor l_basic = DiffTensor::scalar(0.0);
      for (const auto& t : basic_terms) l_basic = add(l_basic, t);
      l_basic = scale(l_basic, 1.0 / static_cast<double>(basic_terms.size()));
      std::optional<DiffTensor> l_perc;
      if (perceptual) l_perc = perceptual_loss(pos_terms, neg_terms, tcfg.loss);
      const DiffTensor loss = combined_loss(l_basic, l_perc, tcfg.loss);
      detail::check_finite_loss(loss.value(), "train_basic", epoch);
      loss_sum += loss.value() * static_cast<double>(stop - start);
      backward(loss);
      if (tcfg.lr > 0) trained.store->adam_step(tcfg.lr);
      trained.store->zero_grad();
    }
    report.train_loss.push_back(loss_sum / static_cast<double>(order.size()));

    const double val = detail::validation_si_snri(separate_fn, val_items);
    report.val_si_snri.push_back(val);
    if (stopper.observe(val)) {
      report.best_epoch = epoch;
      report.best_val_si_snri = val;
      best_values = trained.store->export_values();
    }
    if (stopper.should_stop()) break;
  }
  report.stopping_epoch = std::min(epoch, tcfg.epochs);

  trained.store->import_values(best_values);  // best, not last
  report.final_eval = evaluate_separator(separate_fn, manifest, val_idx, "basic");
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (report_out) *report_out = std::move(report);
  return trained;
}

// ---------------------------------------------------------------------------
// Speaker-identification embedder pretraining

// Trains SiEmbedder with a per-speaker classification head on the clean
// sources of the manifest; the head is kept in a separate store and dropped.
inline TrainedEmbedder pretrain_si_embedder(const DatasetManifest& manifest,
                                            size_t embed_dim, size_t epochs,
                                            double lr, std::uint64_t seed) {
  if (manifest.entries.empty())
    throw std::invalid_argument("pretrain_si_embedder: empty manifest");
  // collect (waveform, speaker) pairs
  std::vector<std::string> speakers;
  std::vector<std::pair<Waveform, size_t>> samples;
  for (const auto& entry : manifest.entries) {
    for (size_t s = 0; s < entry.source_paths.size(); ++s) {
      const std::string& id = entry.speaker_ids[s];
      size_t label = speakers.size();
      for (size_t k = 0; k < speakers.size(); ++k)
        if (speakers[k] == id) {
          label = k;
          break;
        }
      if (label == speakers.size()) speakers.push_back(id);
      samples.emplace_back(read_wav(entry.source_paths[s]), label);
    }
  }

  TrainedEmbedder out;
  out.spectral = std::make_shared<SpectralEmbedder>(manifest.sample_rate);
  out.store = std::make_shared<ParameterStore>();
  out.model = std::make_shared<SiEmbedder>(out.spectral, embed_dim, *out.store, seed);
  out.speakers = speakers;

  // classification head lives in its own store and is discarded afterwards
  ParameterStore head_store;
  Rng rng(hash_combine(seed, fnv1a("si_head")));
  const double bound = std::sqrt(1.0 / static_cast<double>(embed_dim));
  std::vector<double> head_init(speakers.size() * embed_dim);
  for (double& v : head_init) v = rng.uniform(-bound, bound);
  const DiffTensor head =
      head_store.create("head.w", {speakers.size(), embed_dim}, std::move(head_init));

  // deterministic holdout: every 5th sample
  std::vector<size_t> train_set, holdout;
  for (size_t i = 0; i < samples.size(); ++i)
    (i % 5 == 4 ? holdout : train_set).push_back(i);
  if (holdout.empty()) holdout.push_back(0);

  auto logits_for = [&](const Waveform& w) {
    return matmul(head, out.model->forward(DiffTensor::from_values({w.size()}, w.samples)));
  };

  for (size_t epoch = 1; epoch <= epochs; ++epoch) {
    Rng shuffle_rng(hash_combine(seed, hash_combine(0x51e3, epoch)));
    shuffle_rng.shuffle(train_set);
    for (size_t idx : train_set) {
      const auto& [wave, label] = samples[idx];
      const DiffTensor logits = logits_for(wave);
      // cross entropy via shifted log-sum-exp
      double max_logit = -1e300;
      for (double v : logits.data()) max_logit = std::max(max_logit, v);
      const DiffTensor shifted = add_const(logits, -max_logit);
      const DiffTensor lse = log(sum(exp(shifted)));
      std::vector<double> onehot(speakers.size(), 0.0);
      onehot[label] = 1.0;
      const DiffTensor picked =
          sum(mul(shifted, DiffTensor::from_values({speakers.size()}, onehot)));
      const DiffTensor ce = sub(lse, picked);
      if (!std::isfinite(ce.value()))
        throw std::runtime_error("pretrain_si_embedder: non-finite loss");
      backward(ce);
      out.store->adam_step(lr);
      head_store.adam_step(lr);
      out.store->zero_grad();
      head_store.zero_grad();
    }
  }

  size_t correct = 0;
  for (size_t idx : holdout) {
    const auto& [wave, label] = samples[idx];
    const auto& l = logits_for(wave).data();
    size_t arg = 0;
    for (size_t k = 1; k < l.size(); ++k)
      if (l[k] > l[arg]) arg = k;
    if (arg == label) ++correct;
  }
  out.holdout_accuracy = static_cast<double>(correct) / static_cast<double>(holdout.size());
  return out;
}

// ---------------------------------------------------------------------------
// Conditioned pipeline

struct ConditionedPipeline {
  TrainedSeparator basic;
  TrainedEmbedder embedder;
  SeparatorConfig cond_config;
  std::shared_ptr<ParameterStore> cond_store;
  std::shared_ptr<SeparatorModel> cond_model;
  std::shared_ptr<FilmGenerator> film_generator;

  // Intermediate sources from the basic model -> embeddings -> conditioned
  // separation; with refinement_iters > 1 the outputs are re-embedded and
  // separation repeats. Re-embedded conditions are blended with the previous
  // iteration's (0.5 each, renormalized), which keeps the loop stable.
  std::vector<Waveform> separate(const Waveform& mixture, size_t refine_iters = 1) const {
    if (refine_iters < 1)
      throw std::invalid_argument("ConditionedPipeline: refine_iters >= 1");
    std::vector<Waveform> current = basic.model->separate(mixture);
    std::vector<SpeakerEmbedding> prev;
    for (size_t r = 0; r < refine_iters; ++r) {
      std::vector<SpeakerEmbedding> embeds;
      embeds.reserve(current.size());
      for (const auto& w : current) embeds.push_back(embedder.model->embed(w));
      if (r > 0) {
        for (size_t k = 0; k < embeds.size(); ++k) {
          double norm = 0.0;
          for (size_t d = 0; d < embeds[k].values.size(); ++d) {
            embeds[k].values[d] = 0.5 * (embeds[k].values[d] + prev[k].values[d]);
            norm += embeds[k].values[d] * embeds[k].values[d];
          }
          norm = std::sqrt(norm) + 1e-12;
          for (double& v : embeds[k].values) v /= norm;
        }
      }
      prev = embeds;
      current = conditioned_separate(*cond_model, *film_generator, mixture, embeds);
    }
    return current;
  }
};

inline std::vector<Waveform> recurrent_refine(const ConditionedPipeline& pipeline,
                                              const Waveform& mixture, size_t r) {
  return pipeline.separate(mixture, r);
}

// Stage 3 of the conditioned pipeline: trains the FiLM generator and the
// conditioned separator jointly with the uPIT SI-SNR loss. The basic model
// and the embedder stay frozen; embeddings per item are therefore constant
// and cached. `source` picks between embeddings of the basic model's
// intermediate sources (the deployable pipeline) and oracle embeddings of the
// clean sources.
inline ConditionedPipeline train_conditioned(const DatasetManifest& manifest,
                                             const SeparatorConfig& cond_cfg,
                                             const TrainConfig& tcfg,
                                             TrainedSeparator basic,
                                             TrainedEmbedder embedder,
                                             EmbeddingSource source,
                                             RunReport* report_out = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  tcfg.validate();
  if (manifest.entries.empty())
    throw std::invalid_argument("train_conditioned: empty manifest");
  SeparatorConfig mcfg = cond_cfg;
  mcfg.film_enabled = true;
  mcfg.embed_dim = embedder.model->embed_dim();
  mcfg.validate();
  if (basic.config.num_sources != mcfg.num_sources)
    throw std::invalid_argument("train_conditioned: basic checkpoint source count "
                                "does not match conditioned config");

  ConditionedPipeline pipe;
  pipe.basic = std::move(basic);
  pipe.embedder = std::move(embedder);
  pipe.cond_config = mcfg;
  pipe.cond_store = std::make_shared<ParameterStore>();
  pipe.cond_model = std::make_shared<SeparatorModel>(mcfg, *pipe.cond_store, tcfg.seed);
  pipe.film_generator = std::make_shared<FilmGenerator>(
      mcfg.embed_dim, mcfg.masker_channels, mcfg.num_groups(), *pipe.cond_store,
      tcfg.seed);

  // warm start: the conditioned separator inherits the frozen basic model's
  // weights wherever shapes line up (the shared head starts from head 0);
  // the FiLM generator stays at its identity initialization
  for (const auto& name : pipe.basic.store->names()) {
    std::string target = name;
    if (name == "masker.head0.w") {
      target = "masker.head.w";
    } else if (name.rfind("masker.head", 0) == 0) {
      continue;
    }
    if (!pipe.cond_store->has(target)) continue;
    DiffTensor src = pipe.basic.store->get(name);
    DiffTensor dst = pipe.cond_store->get(target);
    if (src.shape() == dst.shape()) dst.data() = src.data();
  }

  std::vector<size_t> train_idx, val_idx;
  split_train_val(manifest, tcfg.val_fraction, train_idx, val_idx);
  std::vector<TrainingItem> train_whole, val_items;
  for (size_t i : train_idx) train_whole.push_back(load_entry(manifest.entries[i]));
  for (size_t i : val_idx) val_items.push_back(load_entry(manifest.entries[i]));
  std::vector<TrainingItem> items = segment_items(train_whole, tcfg.segment_seconds);
  if (items.empty()) throw std::invalid_argument("train_conditioned: no training items");

  // stages 1+2, frozen: per-item speaker embeddings
  std::vector<std::vector<SpeakerEmbedding>> item_embeds(items.size());
  for (size_t k = 0; k < items.size(); ++k) {
    if (source == EmbeddingSource::oracle) {
      item_embeds[k] = oracle_embeddings(*pipe.embedder.model, items[k].sources);
    } else {
      const auto intermediate = pipe.basic.model->separate(items[k].mixture);
      item_embeds[k] = oracle_embeddings(*pipe.embedder.model, intermediate);
    }
  }

  auto separate_val = [&](const TrainingItem& item) {
    std::vector<SpeakerEmbedding> embeds;
    if (source == EmbeddingSource::oracle) {
      embeds = oracle_embeddings(*pipe.embedder.model, item.sources);
    } else {
      embeds =
          oracle_embeddings(*pipe.embedder.model, pipe.basic.model->separate(item.mixture));
    }
    return conditioned_separate(*pipe.cond_model, *pipe.film_generator, item.mixture,
                                embeds);
  };

  RunReport report;
  detail::EarlyStopper stopper(tcfg.patience);
  std::map<std::string, std::vector<double>> best_values = pipe.cond_store->export_values();

  std::vector<size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  size_t epoch = 0;
  for (epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    Rng shuffle_rng(hash_combine(tcfg.seed, hash_combine(0xc04d, epoch)));
    shuffle_rng.shuffle(order);
    report.batch_hashes.push_back(detail::hash_order(order));

    double loss_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += tcfg.batch_size) {
      const size_t stop = std::min(order.size(), start + tcfg.batch_size);
      std::vector<DiffTensor> basic_terms;
      for (size_t bi = start; bi < stop; ++bi) {
        const TrainingItem& item = items[order[bi]];
        const DiffTensor mix_t = SeparatorModel::as_input(item.mixture);
        std::vector<SpeakerEmbedding> embeds = item_embeds[order[bi]];
        if (tcfg.conditioning_noise > 0.0) {
          Rng noise_rng(hash_combine(tcfg.seed,
                                     hash_combine(epoch, 0xf1e1d + order[bi])));
          for (auto& e : embeds) {
            const double s =
                tcfg.conditioning_noise / std::sqrt(static_cast<double>(e.values.size()));
            double norm = 0.0;
            for (double& v : e.values) {
              v += s * noise_rng.normal();
              norm += v * v;
            }
            norm = std::sqrt(norm) + 1e-12;
            for (double& v : e.values) v /= norm;
          }
        }
        const auto film = pipe.film_generator->generate(embeds);
        const auto ests = pipe.cond_model->forward(mix_t, film);
        const auto est_waves =
            SeparatorModel::to_waveforms(ests, item.mixture.sample_rate);
        const auto assign = upit_assign(est_waves, item.sources);
        basic_terms.push_back(si_snr_loss(ests, item.sources, assign));
      }
      DiffTensor loss = DiffTensor::scalar(0.0);
      for (const auto& t : basic_terms) loss = add(loss, t);
      loss = scale(loss, 1.0 / static_cast<double>(basic_terms.size()));
      detail::check_finite_loss(loss.value(), "train_conditioned", epoch);
      loss_sum += loss.value() * static_cast<double>(stop - start);
      backward(loss);
      if (tcfg.lr > 0) pipe.cond_store->adam_step(tcfg.lr);
      pipe.cond_store->zero_grad();
    }
    report.train_loss.push_back(loss_sum / static_cast<double>(order.size()));

    double val = 0.0;
    for (const auto& item : val_items) {
      const auto ests = separate_val(item);
      const auto assign = upit_assign(ests, item.sources);
      double snri = 0.0;
      for (size_t i = 0; i < ests.size(); ++i)
        snri += si_snri(item.mixture, item.sources[assign.permutation[i]], ests[i]);
      val += snri / static_cast<double>(ests.size());
    }
    val /= static_cast<double>(val_items.size());
    report.val_si_snri.push_back(val);
    if (stopper.observe(val)) {
      report.best_epoch = epoch;
      report.best_val_si_snri = val;
      best_values = pipe.cond_store->export_values();
    }
    if (stopper.should_stop()) break;
  }
  report.stopping_epoch = std::min(epoch, tcfg.epochs);
  pipe.cond_store->import_values(best_values);

  const size_t refine = std::max<size_t>(1, tcfg.refinement_iters);
  report.final_eval = evaluate_separator(
      [&](const Waveform& mix) { return pipe.separate(mix, refine); }, manifest,
      val_idx, "conditioned");
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (report_out) *report_out = std::move(report);
  return pipe;
}

// ---------------------------------------------------------------------------
// Ablation runner

struct AblationArm {
  std::string name;
  LossMode mode;
  RunReport report;
  TrainedSeparator model;
};

// The four arms of the weighted-sum ablation: basic loss alone, each distance
// term alone, and both. All arms share the seed, so initialization and batch
// order are identical; only the loss differs.
inline std::vector<AblationArm> run_ablation(const DatasetManifest& manifest,
                                             const SeparatorConfig& mcfg,
                                             const TrainConfig& base_cfg) {
  const std::vector<std::pair<std::string, LossMode>> arms = {
      {"basic", LossMode::basic},
      {"basic+dpos", LossMode::pos_only},
      {"basic+dneg", LossMode::neg_only},
      {"basic+dpos+dneg", LossMode::weighted_sum},
  };
  std::vector<AblationArm> out;
  for (const auto& [name, mode] : arms) {
    TrainConfig cfg = base_cfg;
    cfg.loss.mode = mode;
    AblationArm arm;
    arm.name = name;
    arm.mode = mode;
    arm.model = train_basic(manifest, mcfg, cfg, &arm.report);
    arm.report.final_eval.model_name = name;
    out.push_back(std::move(arm));
  }
  return out;
}

}  // namespace sepkit
