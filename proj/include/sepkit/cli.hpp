// sepkit/cli.hpp
//
// Command dispatch for the sepkit tool: gen-data, train, eval, ablate,
// gradcheck. Every run writes a manifest (config hash, seed, version) into
// its out_dir; exit codes are 0 success, 1 validation error, 2 runtime
// failure. All artifacts land under out_dir.

#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sepkit/config.hpp"
#include "sepkit/datagen.hpp"
#include "sepkit/gradcheck.hpp"
#include "sepkit/training.hpp"

namespace sepkit {

struct RunSpec {
  std::string command;      // gen-data | train | eval | ablate | gradcheck
  std::string config_path;  // optional; empty -> all defaults
  std::string out_dir;
  std::optional<std::uint64_t> seed_override;
  bool quiet = false;
};

namespace detail {

inline nlohmann::json report_to_json(const RunReport& report, bool with_wall_time) {
  nlohmann::json j;
  j["train_loss"] = report.train_loss;
  j["val_si_snri"] = report.val_si_snri;
  j["stopping_epoch"] = report.stopping_epoch;
  j["best_epoch"] = report.best_epoch;
  j["best_val_si_snri"] = report.best_val_si_snri;
  j["batch_hashes"] = report.batch_hashes;
  nlohmann::json eval;
  eval["model"] = report.final_eval.model_name;
  eval["mean_si_snr_db"] = report.final_eval.mean_si_snr;
  eval["median_si_snr_db"] = report.final_eval.median_si_snr;
  eval["mean_si_snri_db"] = report.final_eval.mean_si_snri;
  eval["median_si_snri_db"] = report.final_eval.median_si_snri;
  eval["mean_stoi"] = report.final_eval.mean_stoi;
  eval["median_stoi"] = report.final_eval.median_stoi;
  eval["mean_leakage_db"] = report.final_eval.mean_leakage;
  eval["median_leakage_db"] = report.final_eval.median_leakage;
  j["final_eval"] = eval;
  if (with_wall_time) j["wall_time_s"] = report.wall_time_s;
  return j;
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cli: cannot open for write: " + path);
  os << j.dump(2) << "\n";
}

inline void write_run_manifest(const RunSpec& spec, const AppConfig& cfg) {
  nlohmann::json j;
  j["command"] = spec.command;
  j["config_hash"] = to_hex(cfg.config_hash());
  j["data_seed"] = cfg.data.seed;
  j["train_seed"] = cfg.train.seed;
  j["version"] = kVersion;
  j["threads"] = thread_budget();
  write_json(j, spec.out_dir + "/run_manifest.json");
}

}  // namespace detail

// Reports for a single trained model: run_report.json (includes wall time),
// metrics.json (fully deterministic), per-example JSONL and the summary CSV.
inline void report_write(const RunReport& report, const std::string& out_dir) {
  detail::write_json(detail::report_to_json(report, true), out_dir + "/run_report.json");
  detail::write_json(detail::report_to_json(report, false), out_dir + "/metrics.json");
  write_eval_jsonl(report.final_eval, out_dir + "/eval_detail.jsonl");
  write_eval_summary_csv({report.final_eval}, out_dir + "/eval_summary.csv");
}

// Table-2-shaped comparison: fixed arm order basic, +D_pos, +D_neg, +both.
inline void write_ablation_csv(const std::vector<AblationArm>& arms,
                               const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cli: cannot open for write: " + path);
  os << "model,si_snr_db,stoi\n";
  for (const auto& arm : arms)
    os << arm.name << "," << format_fixed6(arm.report.final_eval.mean_si_snr) << ","
       << format_fixed6(arm.report.final_eval.mean_stoi) << "\n";
}

namespace detail {

inline int run_command(const RunSpec& spec, const AppConfig& cfg, std::ostream& log) {
  if (spec.command == "gen-data") {
    const DatasetManifest manifest =
        generate_dataset(cfg.data.num_speakers, cfg.data.utterances_per_pair,
                         cfg.data.duration_s, cfg.data.sample_rate, spec.out_dir,
                         cfg.data.seed);
    log << "gen-data: " << manifest.entries.size() << " mixtures -> " << spec.out_dir
        << "\n";
    return 0;
  }

  if (spec.command == "gradcheck") {
    const auto results = gradcheck::run_gradient_suite();
    std::ofstream os(spec.out_dir + "/gradcheck.txt");
    const bool ok_file = gradcheck::report(results, os);
    if (!spec.quiet) gradcheck::report(results, log);
    return ok_file ? 0 : 2;
  }

  if (cfg.data.manifest.empty())
    throw std::invalid_argument("cli: command '" + spec.command +
                                "' requires data.manifest in the config");
  DatasetManifest manifest = read_manifest(cfg.data.manifest);
  if (!manifest.entries.empty()) {
    // sample rate comes from the stored audio
    manifest.sample_rate = read_wav(manifest.entries[0].mixture_path).sample_rate;
  }

  if (spec.command == "train") {
    if (cfg.pipeline == PipelineKind::basic) {
      RunReport report;
      TrainedSeparator trained = train_basic(manifest, cfg.model, cfg.train, &report);
      report.final_eval.model_name = to_string(cfg.train.loss.mode);
      save_checkpoint(*trained.store, spec.out_dir + "/checkpoint.ckpt");
      report_write(report, spec.out_dir);
      log << "train[basic/" << to_string(cfg.train.loss.mode)
          << "]: stopped at epoch " << report.stopping_epoch << ", best val SI-SNRi "
          << format_fixed6(report.best_val_si_snri) << " dB\n";
      return 0;
    }
    if (cfg.pipeline == PipelineKind::si_embed) {
      TrainedEmbedder emb = pretrain_si_embedder(manifest, cfg.model.embed_dim,
                                                 cfg.si_epochs, cfg.train.lr,
                                                 cfg.train.seed);
      save_checkpoint(*emb.store, spec.out_dir + "/si_embedder.ckpt");
      nlohmann::json j;
      j["holdout_accuracy"] = emb.holdout_accuracy;
      j["speakers"] = emb.speakers;
      write_json(j, spec.out_dir + "/si_report.json");
      log << "train[si_embed]: holdout accuracy "
          << format_fixed6(emb.holdout_accuracy) << "\n";
      return 0;
    }
    // conditioned
    if (cfg.basic_checkpoint.empty() || cfg.si_checkpoint.empty())
      throw std::invalid_argument(
          "cli: conditioned training requires train.basic_checkpoint and "
          "train.si_checkpoint");
    TrainedSeparator basic;
    basic.config = cfg.model;
    basic.config.film_enabled = false;
    basic.store = std::make_shared<ParameterStore>();
    basic.model =
        std::make_shared<SeparatorModel>(basic.config, *basic.store, cfg.train.seed);
    load_checkpoint(*basic.store, cfg.basic_checkpoint);

    TrainedEmbedder emb;
    emb.spectral = std::make_shared<SpectralEmbedder>(manifest.sample_rate);
    emb.store = std::make_shared<ParameterStore>();
    emb.model = std::make_shared<SiEmbedder>(emb.spectral, cfg.model.embed_dim,
                                             *emb.store, cfg.train.seed);
    load_checkpoint(*emb.store, cfg.si_checkpoint);

    RunReport report;
    ConditionedPipeline pipe = train_conditioned(manifest, cfg.model, cfg.train,
                                                 std::move(basic), std::move(emb),
                                                 cfg.embedding, &report);
    save_checkpoint(*pipe.cond_store, spec.out_dir + "/conditioned.ckpt");
    report_write(report, spec.out_dir);
    log << "train[conditioned]: stopped at epoch " << report.stopping_epoch
        << ", best val SI-SNRi " << format_fixed6(report.best_val_si_snri) << " dB\n";
    return 0;
  }

  if (spec.command == "eval") {
    std::vector<size_t> all(manifest.entries.size());
    std::iota(all.begin(), all.end(), 0);
    EvalReport eval;
    if (cfg.pipeline == PipelineKind::conditioned) {
      if (cfg.eval_checkpoint.empty() || cfg.basic_checkpoint.empty() ||
          cfg.si_checkpoint.empty())
        throw std::invalid_argument(
            "cli: conditioned eval requires eval.checkpoint, train.basic_checkpoint "
            "and train.si_checkpoint");
      ConditionedPipeline pipe;
      pipe.basic.config = cfg.model;
      pipe.basic.config.film_enabled = false;
      pipe.basic.store = std::make_shared<ParameterStore>();
      pipe.basic.model = std::make_shared<SeparatorModel>(pipe.basic.config,
                                                          *pipe.basic.store, 1);
      load_checkpoint(*pipe.basic.store, cfg.basic_checkpoint);
      pipe.embedder.spectral = std::make_shared<SpectralEmbedder>(manifest.sample_rate);
      pipe.embedder.store = std::make_shared<ParameterStore>();
      pipe.embedder.model = std::make_shared<SiEmbedder>(
          pipe.embedder.spectral, cfg.model.embed_dim, *pipe.embedder.store, 1);
      load_checkpoint(*pipe.embedder.store, cfg.si_checkpoint);
      pipe.cond_config = cfg.model;
      pipe.cond_config.film_enabled = true;
      pipe.cond_store = std::make_shared<ParameterStore>();
      pipe.cond_model =
          std::make_shared<SeparatorModel>(pipe.cond_config, *pipe.cond_store, 1);
      pipe.film_generator = std::make_shared<FilmGenerator>(
          pipe.cond_config.embed_dim, pipe.cond_config.masker_channels,
          pipe.cond_config.num_groups(), *pipe.cond_store, 1);
      load_checkpoint(*pipe.cond_store, cfg.eval_checkpoint);
      const size_t refine = std::max<size_t>(1, cfg.train.refinement_iters);
      eval = evaluate_separator(
          [&](const Waveform& mix) { return pipe.separate(mix, refine); }, manifest,
          all, cfg.eval_model_name);
    } else {
      if (cfg.eval_checkpoint.empty())
        throw std::invalid_argument("cli: eval requires eval.checkpoint");
      ParameterStore store;
      SeparatorModel model(cfg.model, store, 1);
      load_checkpoint(store, cfg.eval_checkpoint);
      eval = evaluate_separator([&](const Waveform& mix) { return model.separate(mix); },
                                manifest, all, cfg.eval_model_name);
    }
    write_eval_jsonl(eval, spec.out_dir + "/eval_detail.jsonl");
    write_eval_summary_csv({eval}, spec.out_dir + "/eval_summary.csv");
    log << "eval[" << eval.model_name << "]: mean SI-SNR "
        << format_fixed6(eval.mean_si_snr) << " dB, mean STOI "
        << format_fixed6(eval.mean_stoi) << "\n";
    return 0;
  }

  if (spec.command == "ablate") {
    const auto arms = run_ablation(manifest, cfg.model, cfg.train);
    write_ablation_csv(arms, spec.out_dir + "/comparison.csv");
    for (const auto& arm : arms)
      write_json(report_to_json(arm.report, true),
                 spec.out_dir + "/report_" + std::string(to_string(arm.mode)) + ".json");
    log << "ablate: 4 arms -> " << spec.out_dir << "/comparison.csv\n";
    return 0;
  }

  throw std::invalid_argument("cli: unknown command '" + spec.command + "'");
}

}  // namespace detail

inline int dispatch(const RunSpec& spec, std::ostream& log = std::cout) {
  try {
    AppConfig cfg =
        spec.config_path.empty() ? AppConfig{} : parse_config(spec.config_path);
    if (spec.seed_override) {
      cfg.data.seed = *spec.seed_override;
      cfg.train.seed = *spec.seed_override;
    }
    if (spec.out_dir.empty())
      throw std::invalid_argument("cli: --out directory is required");
    std::error_code ec;
    std::filesystem::create_directories(spec.out_dir, ec);
    if (!std::filesystem::is_directory(spec.out_dir))
      throw std::runtime_error("cli: cannot create out dir: " + spec.out_dir);
    detail::write_run_manifest(spec, cfg);
    std::ostringstream devnull;
    return detail::run_command(spec, cfg, spec.quiet ? devnull : log);
  } catch (const detail::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace sepkit
