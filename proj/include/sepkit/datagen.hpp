// sepkit/datagen.hpp
//
// Deterministic synthetic multi-speaker corpus. "Voices" are harmonic tones
// with a piecewise pitch contour, vibrato, random pauses and an amplitude
// envelope; speaker identity is a verifiable spectral property (disjoint f0
// ranges). Mixtures are samplewise sums of the sources.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sepkit/common.hpp"
#include "sepkit/signals.hpp"

namespace sepkit {

struct SpeakerProfile {
  std::string speaker_id;
  double f0_low_hz = 150.0;
  double f0_high_hz = 180.0;
  std::vector<double> harmonic_gains = {1.0, 0.6, 0.4, 0.25};
  double vibrato_rate_hz = 5.0;
  std::uint64_t seed = 0;

  void validate(int sample_rate) const {
    if (!(0.0 < f0_low_hz && f0_low_hz < f0_high_hz &&
          f0_high_hz < sample_rate / 4.0))
      throw std::invalid_argument("SpeakerProfile: need 0 < low < high < rate/4");
    if (harmonic_gains.empty())
      throw std::invalid_argument("SpeakerProfile: harmonic_gains must be non-empty");
    bool any_positive = false;
    for (double g : harmonic_gains) {
      if (g < 0.0)
        throw std::invalid_argument("SpeakerProfile: harmonic gains must be >= 0");
      any_positive = any_positive || g > 0.0;
    }
    if (!any_positive)
      throw std::invalid_argument("SpeakerProfile: at least one positive harmonic gain");
  }
};

struct MixtureExample {
  Waveform mixture;
  std::vector<Waveform> sources;
  std::vector<std::string> speaker_ids;
};

struct ManifestEntry {
  std::string mixture_path;
  std::vector<std::string> source_paths;
  std::vector<std::string> speaker_ids;
  double duration_s = 0.0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  int sample_rate = 16000;
  std::uint64_t seed = 0;
};

namespace detail {

constexpr double kVoicedRms = 0.1;
constexpr double kVibratoDepth = 0.02;
constexpr double kFadeSeconds = 0.01;

}  // namespace detail

// Synthesizes one utterance and reports which samples are voiced (true) vs
// inside a pause. The voiced-portion RMS is normalized to exactly 0.1.
inline Waveform synth_utterance_with_gate(const SpeakerProfile& profile,
                                          double duration_s, int sample_rate,
                                          std::uint64_t seed,
                                          std::vector<bool>* gate_out = nullptr) {
  if (duration_s <= 0.0)
    throw std::invalid_argument("synth_utterance: duration must be positive");
  profile.validate(sample_rate);
  const size_t n = static_cast<size_t>(std::llround(duration_s * sample_rate));
  Rng rng(hash_combine(profile.seed, seed));

  // piecewise-linear pitch contour: control points every ~0.3 s
  const double ctrl_spacing = 0.3;
  const size_t num_ctrl = static_cast<size_t>(duration_s / ctrl_spacing) + 2;
  std::vector<double> ctrl(num_ctrl);
  for (auto& c : ctrl) c = rng.uniform(profile.f0_low_hz, profile.f0_high_hz);

  // voiced/pause gate: alternating spans, pauses with probability 0.25
  std::vector<bool> gate(n, true);
  {
    size_t pos = static_cast<size_t>(rng.uniform(0.25, 0.6) * sample_rate);
    while (pos < n) {
      if (rng.uniform() < 0.25) {
        const size_t pause = static_cast<size_t>(rng.uniform(0.05, 0.15) * sample_rate);
        for (size_t i = pos; i < std::min(n, pos + pause); ++i) gate[i] = false;
        pos += pause;
      }
      pos += static_cast<size_t>(rng.uniform(0.25, 0.6) * sample_rate);
    }
  }

  // amplitude envelope: fade at voiced-span boundaries plus a per-span gain
  std::vector<double> env(n, 0.0);
  const size_t fade = static_cast<size_t>(detail::kFadeSeconds * sample_rate);
  {
    size_t i = 0;
    while (i < n) {
      if (!gate[i]) {
        ++i;
        continue;
      }
      size_t j = i;
      while (j < n && gate[j]) ++j;
      const double span_gain = rng.uniform(0.8, 1.2);
      for (size_t t = i; t < j; ++t) {
        double e = span_gain;
        if (t - i < fade) e *= static_cast<double>(t - i + 1) / (fade + 1);
        if (j - 1 - t < fade) e *= static_cast<double>(j - t) / (fade + 1);
        env[t] = e;
      }
      i = j;
    }
  }

  // additive synthesis with accumulated phase
  std::vector<double> samples(n, 0.0);
  double phase = rng.uniform(0.0, 2.0 * M_PI);
  const double nyquist_guard = 0.45 * sample_rate;
  for (size_t t = 0; t < n; ++t) {
    const double sec = static_cast<double>(t) / sample_rate;
    const double cpos = sec / ctrl_spacing;
    const size_t c0 = std::min(static_cast<size_t>(cpos), num_ctrl - 2);
    const double frac = cpos - static_cast<double>(c0);
    double f0 = (1.0 - frac) * ctrl[c0] + frac * ctrl[c0 + 1];
    f0 *= 1.0 + detail::kVibratoDepth *
                    std::sin(2.0 * M_PI * profile.vibrato_rate_hz * sec);
    phase += 2.0 * M_PI * f0 / sample_rate;
    double v = 0.0;
    for (size_t h = 0; h < profile.harmonic_gains.size(); ++h) {
      const double hf = f0 * static_cast<double>(h + 1);
      if (hf >= nyquist_guard) break;
      v += profile.harmonic_gains[h] * std::sin(static_cast<double>(h + 1) * phase);
    }
    samples[t] = env[t] * v;
  }

  // normalize voiced-portion RMS to exactly kVoicedRms
  double energy = 0.0;
  size_t voiced = 0;
  for (size_t t = 0; t < n; ++t)
    if (gate[t]) {
      energy += samples[t] * samples[t];
      ++voiced;
    }
  if (voiced > 0 && energy > 0.0) {
    const double scale = detail::kVoicedRms / std::sqrt(energy / static_cast<double>(voiced));
    for (double& s : samples) s *= scale;
  }

  if (gate_out) *gate_out = std::move(gate);
  return Waveform(std::move(samples), sample_rate);
}

inline Waveform synth_utterance(const SpeakerProfile& profile, double duration_s,
                                int sample_rate, std::uint64_t seed) {
  return synth_utterance_with_gate(profile, duration_s, sample_rate, seed, nullptr);
}

// Samplewise mixing; sources are stored unmodified.
inline MixtureExample make_mixture(std::vector<Waveform> sources,
                                   std::vector<std::string> speaker_ids) {
  if (sources.size() < 2)
    throw std::invalid_argument("make_mixture: need at least 2 sources");
  if (speaker_ids.size() != sources.size())
    throw std::invalid_argument("make_mixture: speaker_ids count mismatch");
  const size_t n = sources[0].size();
  const int rate = sources[0].sample_rate;
  for (const auto& s : sources) {
    if (s.size() != n) throw std::invalid_argument("make_mixture: length mismatch");
    if (s.sample_rate != rate)
      throw std::invalid_argument("make_mixture: sample rate mismatch");
  }
  MixtureExample ex;
  ex.mixture.sample_rate = rate;
  ex.mixture.samples.assign(n, 0.0);
  for (const auto& s : sources)
    for (size_t i = 0; i < n; ++i) ex.mixture.samples[i] += s.samples[i];
  ex.sources = std::move(sources);
  ex.speaker_ids = std::move(speaker_ids);
  return ex;
}

// Speaker profiles with disjoint f0 bands (30 Hz wide, 15 Hz apart) so that
// identities are separable by pitch alone.
inline std::vector<SpeakerProfile> default_speaker_profiles(size_t num_speakers,
                                                            int sample_rate,
                                                            std::uint64_t seed) {
  std::vector<SpeakerProfile> profiles;
  profiles.reserve(num_speakers);
  for (size_t s = 0; s < num_speakers; ++s) {
    Rng rng(hash_combine(seed, 0x5eed0000 + s));
    SpeakerProfile p;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "spk%02zu", s);
    p.speaker_id = buf;
    p.f0_low_hz = 150.0 + 45.0 * static_cast<double>(s);
    p.f0_high_hz = p.f0_low_hz + 30.0;
    p.harmonic_gains = {1.0, rng.uniform(0.4, 0.7), rng.uniform(0.2, 0.45),
                        rng.uniform(0.1, 0.3)};
    p.vibrato_rate_hz = rng.uniform(4.0, 6.5);
    p.seed = hash_combine(seed, 0xba5e + s);
    p.validate(sample_rate);
    profiles.push_back(std::move(p));
  }
  return profiles;
}

inline void write_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("manifest: cannot open for write: " + path);
  for (const auto& e : manifest.entries) {
    nlohmann::json j;
    j["mix"] = e.mixture_path;
    j["srcs"] = e.source_paths;
    j["speakers"] = e.speaker_ids;
    j["dur"] = e.duration_s;
    os << j.dump() << "\n";
  }
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("manifest: file not found: " + path);
  DatasetManifest manifest;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw std::runtime_error("manifest: bad JSON at line " + std::to_string(line_no));
    ManifestEntry e;
    e.mixture_path = j.at("mix").get<std::string>();
    e.source_paths = j.at("srcs").get<std::vector<std::string>>();
    e.speaker_ids = j.at("speakers").get<std::vector<std::string>>();
    e.duration_s = j.at("dur").get<double>();
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

// Generates the full synthetic corpus: every unordered speaker pair,
// `utterances_per_pair` mixtures each. Deterministic in `seed` (per-entry
// seeds are derived by hashing, so generation order does not matter).
inline DatasetManifest generate_dataset(size_t num_speakers, size_t utterances_per_pair,
                                        double duration_s, int sample_rate,
                                        const std::string& out_dir, std::uint64_t seed) {
  if (num_speakers < 2)
    throw std::invalid_argument("generate_dataset: need at least 2 speakers");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (!std::filesystem::is_directory(out_dir))
    throw std::runtime_error("generate_dataset: cannot create out_dir: " + out_dir);

  const auto profiles = default_speaker_profiles(num_speakers, sample_rate, seed);
  DatasetManifest manifest;
  manifest.sample_rate = sample_rate;
  manifest.seed = seed;

  size_t entry_index = 0;
  for (size_t a = 0; a < num_speakers; ++a)
    for (size_t b = a + 1; b < num_speakers; ++b)
      for (size_t u = 0; u < utterances_per_pair; ++u) {
        const std::uint64_t entry_seed = hash_combine(seed, entry_index);
        Waveform src_a = synth_utterance(profiles[a], duration_s, sample_rate,
                                         hash_combine(entry_seed, 1));
        Waveform src_b = synth_utterance(profiles[b], duration_s, sample_rate,
                                         hash_combine(entry_seed, 2));
        MixtureExample ex = make_mixture(
            {std::move(src_a), std::move(src_b)},
            {profiles[a].speaker_id, profiles[b].speaker_id});

        char stem[32];
        std::snprintf(stem, sizeof(stem), "%04zu", entry_index);
        ManifestEntry entry;
        entry.mixture_path = out_dir + "/mix_" + stem + ".wav";
        entry.source_paths = {out_dir + "/src_" + stem + "_0.wav",
                              out_dir + "/src_" + stem + "_1.wav"};
        entry.speaker_ids = ex.speaker_ids;
        entry.duration_s = duration_s;
        write_wav(entry.mixture_path, ex.mixture);
        write_wav(entry.source_paths[0], ex.sources[0]);
        write_wav(entry.source_paths[1], ex.sources[1]);
        manifest.entries.push_back(std::move(entry));
        ++entry_index;
      }

  write_manifest(manifest, out_dir + "/manifest.jsonl");
  return manifest;
}

}  // namespace sepkit
