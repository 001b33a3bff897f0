// sepkit/config.hpp
//
// Plain-text run configuration: one `section.key = value` per line, `#`
// comments. Unknown keys and type errors are rejected with line numbers.
// An empty (or absent) file yields all defaults.

#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sepkit/common.hpp"
#include "sepkit/losses.hpp"
#include "sepkit/models.hpp"
#include "sepkit/training.hpp"

namespace sepkit {

enum class PipelineKind { basic, conditioned, si_embed };

inline const char* to_string(PipelineKind p) {
  switch (p) {
    case PipelineKind::basic: return "basic";
    case PipelineKind::conditioned: return "conditioned";
    case PipelineKind::si_embed: return "si_embed";
  }
  return "?";
}

struct DataConfig {
  std::string manifest;  // path to an existing manifest (train/eval)
  size_t num_speakers = 4;
  size_t utterances_per_pair = 2;
  double duration_s = 3.0;
  int sample_rate = 16000;
  std::uint64_t seed = 1;
};

struct AppConfig {
  DataConfig data;
  SeparatorConfig model;
  TrainConfig train;
  PipelineKind pipeline = PipelineKind::basic;
  EmbeddingSource embedding = EmbeddingSource::model;
  std::string basic_checkpoint;
  std::string si_checkpoint;
  size_t si_epochs = 6;
  std::string eval_checkpoint;
  std::string eval_model_name = "model";
  std::string source_text;  // raw config file content (echoed in run manifests)

  std::uint64_t config_hash() const { return fnv1a(source_text); }
};

namespace detail {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

class ConfigReader {
 public:
  explicit ConfigReader(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      // strip comments (quotes respected)
      bool in_quote = false;
      for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_quote = !in_quote;
        if (line[i] == '#' && !in_quote) {
          line = line.substr(0, i);
          break;
        }
      }
      const std::string stripped = trim(line);
      if (stripped.empty()) continue;
      const size_t eq = stripped.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config:" + std::to_string(line_no) +
                          ": expected 'section.key = value'");
      const std::string key = trim(stripped.substr(0, eq));
      const std::string value = trim(stripped.substr(eq + 1));
      if (key.find('.') == std::string::npos)
        throw ConfigError("config:" + std::to_string(line_no) + ": key '" + key +
                          "' must be section.key");
      if (entries_.count(key))
        throw ConfigError("config:" + std::to_string(line_no) + ": duplicate key '" +
                          key + "'");
      entries_[key] = {value, line_no};
    }
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.consumed = true;
    std::string v = it->second.value;
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"')
      v = v.substr(1, v.size() - 2);
    return v;
  }

  double get_double(const std::string& key, double fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.consumed = true;
    const std::string& v = it->second.value;
    try {
      size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("");
      return d;
    } catch (...) {
      throw ConfigError("config:" + std::to_string(it->second.line) +
                        ": expected number for key '" + key + "', got '" + v + "'");
    }
  }

  long long get_int(const std::string& key, long long fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const double d = get_double(key, 0.0);
    const long long n = static_cast<long long>(d);
    if (static_cast<double>(n) != d)
      throw ConfigError("config:" + std::to_string(it->second.line) +
                        ": expected integer for key '" + key + "'");
    return n;
  }

  bool get_bool(const std::string& key, bool fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.consumed = true;
    const std::string& v = it->second.value;
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config:" + std::to_string(it->second.line) +
                      ": expected true/false for key '" + key + "', got '" + v + "'");
  }

  std::vector<int> get_int_list(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return {};
    it->second.consumed = true;
    std::vector<int> out;
    std::string v = it->second.value;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = trim(tok);
      try {
        size_t pos = 0;
        out.push_back(std::stoi(tok, &pos));
        if (pos != tok.size()) throw std::invalid_argument("");
      } catch (...) {
        throw ConfigError("config:" + std::to_string(it->second.line) +
                          ": expected comma-separated integers for key '" + key + "'");
      }
    }
    return out;
  }

  void reject_unconsumed() const {
    for (const auto& [key, entry] : entries_)
      if (!entry.consumed)
        throw ConfigError("config:" + std::to_string(entry.line) + ": unknown key '" +
                          key + "'");
  }

 private:
  struct Entry {
    std::string value;
    size_t line = 0;
    bool consumed = false;
  };
  std::map<std::string, Entry> entries_;
};

}  // namespace detail

inline AppConfig parse_config_text(const std::string& text) {
  detail::ConfigReader reader(text);
  AppConfig cfg;
  cfg.source_text = text;

  cfg.data.manifest = reader.get_string("data.manifest", cfg.data.manifest);
  cfg.data.num_speakers = static_cast<size_t>(
      reader.get_int("data.num_speakers", static_cast<long long>(cfg.data.num_speakers)));
  cfg.data.utterances_per_pair = static_cast<size_t>(reader.get_int(
      "data.utterances_per_pair", static_cast<long long>(cfg.data.utterances_per_pair)));
  cfg.data.duration_s = reader.get_double("data.duration_s", cfg.data.duration_s);
  cfg.data.sample_rate =
      static_cast<int>(reader.get_int("data.sample_rate", cfg.data.sample_rate));
  cfg.data.seed = static_cast<std::uint64_t>(
      reader.get_int("data.seed", static_cast<long long>(cfg.data.seed)));

  cfg.model.num_sources = static_cast<size_t>(
      reader.get_int("model.num_sources", static_cast<long long>(cfg.model.num_sources)));
  cfg.model.encoder_filters = static_cast<size_t>(reader.get_int(
      "model.encoder_filters", static_cast<long long>(cfg.model.encoder_filters)));
  cfg.model.encoder_kernel = static_cast<size_t>(reader.get_int(
      "model.encoder_kernel", static_cast<long long>(cfg.model.encoder_kernel)));
  cfg.model.masker_channels = static_cast<size_t>(reader.get_int(
      "model.masker_channels", static_cast<long long>(cfg.model.masker_channels)));
  cfg.model.num_layers = static_cast<size_t>(
      reader.get_int("model.num_layers", static_cast<long long>(cfg.model.num_layers)));
  cfg.model.group_size = static_cast<size_t>(
      reader.get_int("model.group_size", static_cast<long long>(cfg.model.group_size)));
  cfg.model.film_enabled = reader.get_bool("model.film", cfg.model.film_enabled);
  cfg.model.embed_dim = static_cast<size_t>(
      reader.get_int("model.embed_dim", static_cast<long long>(cfg.model.embed_dim)));
  cfg.model.dilations = reader.get_int_list("model.dilations");

  cfg.train.epochs = static_cast<size_t>(
      reader.get_int("train.epochs", static_cast<long long>(cfg.train.epochs)));
  cfg.train.batch_size = static_cast<size_t>(
      reader.get_int("train.batch_size", static_cast<long long>(cfg.train.batch_size)));
  cfg.train.segment_seconds =
      reader.get_double("train.segment_seconds", cfg.train.segment_seconds);
  cfg.train.lr = reader.get_double("train.lr", cfg.train.lr);
  cfg.train.patience = static_cast<size_t>(
      reader.get_int("train.patience", static_cast<long long>(cfg.train.patience)));
  cfg.train.seed = static_cast<std::uint64_t>(
      reader.get_int("train.seed", static_cast<long long>(cfg.train.seed)));
  cfg.train.refinement_iters = static_cast<size_t>(reader.get_int(
      "train.refinement_iters", static_cast<long long>(cfg.train.refinement_iters)));
  cfg.train.val_fraction = reader.get_double("train.val_fraction", cfg.train.val_fraction);
  cfg.train.conditioning_noise =
      reader.get_double("train.conditioning_noise", cfg.train.conditioning_noise);

  const std::string pipeline = reader.get_string("train.pipeline", "basic");
  if (pipeline == "basic") {
    cfg.pipeline = PipelineKind::basic;
  } else if (pipeline == "conditioned") {
    cfg.pipeline = PipelineKind::conditioned;
  } else if (pipeline == "si_embed") {
    cfg.pipeline = PipelineKind::si_embed;
  } else {
    throw detail::ConfigError("config: unknown train.pipeline '" + pipeline + "'");
  }
  const std::string embedding = reader.get_string("train.embedding", "model");
  if (embedding == "model") {
    cfg.embedding = EmbeddingSource::model;
  } else if (embedding == "oracle") {
    cfg.embedding = EmbeddingSource::oracle;
  } else {
    throw detail::ConfigError("config: unknown train.embedding '" + embedding + "'");
  }
  cfg.basic_checkpoint = reader.get_string("train.basic_checkpoint", "");
  cfg.si_checkpoint = reader.get_string("train.si_checkpoint", "");
  cfg.si_epochs = static_cast<size_t>(
      reader.get_int("train.si_epochs", static_cast<long long>(cfg.si_epochs)));

  cfg.train.loss.mode = parse_loss_mode(reader.get_string("loss.mode", "basic"));
  cfg.train.loss.lambda_b = reader.get_double("loss.lambda_b", cfg.train.loss.lambda_b);
  cfg.train.loss.lambda_p = reader.get_double("loss.lambda_p", cfg.train.loss.lambda_p);
  cfg.train.loss.lambda1 = reader.get_double("loss.lambda1", cfg.train.loss.lambda1);
  cfg.train.loss.lambda2 = reader.get_double("loss.lambda2", cfg.train.loss.lambda2);
  cfg.train.loss.alpha = reader.get_double("loss.alpha", cfg.train.loss.alpha);
  cfg.train.loss.eps_inv = reader.get_double("loss.eps_inv", cfg.train.loss.eps_inv);

  cfg.eval_checkpoint = reader.get_string("eval.checkpoint", "");
  cfg.eval_model_name = reader.get_string("eval.model_name", cfg.eval_model_name);

  reader.reject_unconsumed();
  cfg.train.loss.validate();
  return cfg;
}

inline AppConfig parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: file not found: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace sepkit
