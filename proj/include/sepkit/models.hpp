// sepkit/models.hpp
//
// Separation networks and embedders:
//  - SeparatorModel: encoder / masker / decoder. The masker is a stack of
//    grouped dilated causal conv blocks (layer norm + PReLU + residual).
//    Without FiLM it runs once and emits one mask per source through
//    per-source heads; with FiLM it runs once per source, modulating each
//    group's output with that source's (gamma, beta), through a shared head.
//  - FilmGenerator: affine network mapping a speaker embedding to per-group
//    (gamma, beta); initialized to the identity modulation.
//  - SpectralEmbedder: fixed differentiable log-mel-style frame features
//    (the phi(.) of the perceptual distances). Not trainable.
//  - SiEmbedder: small trainable conv stack producing a unit-norm speaker
//    embedding; pretrained with a classification head that is then discarded.

#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sepkit/common.hpp"
#include "sepkit/optim.hpp"
#include "sepkit/signals.hpp"
#include "sepkit/tensor.hpp"

namespace sepkit {

struct SeparatorConfig {
  size_t num_sources = 2;       // C
  size_t encoder_filters = 64;  // N
  size_t encoder_kernel = 32;   // stride = kernel / 2
  size_t masker_channels = 64;
  size_t num_layers = 8;   // L
  size_t group_size = 4;   // layers per group; L must be divisible
  std::vector<int> dilations;  // per layer; empty -> doubling within each group
  bool film_enabled = false;
  size_t embed_dim = 32;  // speaker embedding dim consumed by FiLM

  size_t encoder_stride() const { return encoder_kernel / 2; }
  size_t num_groups() const { return num_layers / group_size; }

  std::vector<int> effective_dilations() const {
    if (!dilations.empty()) return dilations;
    std::vector<int> d(num_layers);
    for (size_t l = 0; l < num_layers; ++l) d[l] = 1 << (l % group_size);
    return d;
  }

  void validate() const {
    if (num_sources < 2) throw std::invalid_argument("SeparatorConfig: num_sources >= 2");
    if (encoder_kernel < 2 || encoder_kernel % 2 != 0)
      throw std::invalid_argument("SeparatorConfig: encoder_kernel must be even, >= 2");
    if (num_layers == 0 || group_size == 0 || num_layers % group_size != 0)
      throw std::invalid_argument(
          "SeparatorConfig: num_layers must be a positive multiple of group_size");
    const auto d = effective_dilations();
    if (d.size() != num_layers)
      throw std::invalid_argument("SeparatorConfig: dilation schedule length mismatch");
    for (size_t l = 0; l < num_layers; ++l) {
      if (d[l] < 1) throw std::invalid_argument("SeparatorConfig: dilations must be >= 1");
      if (l % group_size == 0 && d[l] != 1)
        throw std::invalid_argument(
            "SeparatorConfig: first layer of each group must have dilation 1");
      if (l % group_size != 0 && d[l] <= d[l - 1])
        throw std::invalid_argument(
            "SeparatorConfig: dilations must strictly increase within a group");
    }
  }
};

// Per-source FiLM modulation: one (gamma, beta) pair per masker group.
struct FilmParams {
  std::vector<DiffTensor> gamma;  // each [channels]
  std::vector<DiffTensor> beta;

  static FilmParams identity(size_t num_groups, size_t channels) {
    FilmParams p;
    for (size_t g = 0; g < num_groups; ++g) {
      p.gamma.push_back(
          DiffTensor::from_values({channels}, std::vector<double>(channels, 1.0)));
      p.beta.push_back(DiffTensor::zeros({channels}));
    }
    return p;
  }
};

struct SpeakerEmbedding {
  std::vector<double> values;
  std::string speaker_hint;  // optional id
};

// frames x dim representation sequence; `features` may carry tape history
// when computed from a differentiable estimate.
struct EmbeddingSequence {
  DiffTensor features;  // [M x D]
  size_t frame_hop = 160;

  size_t frames() const { return features.dim(0); }
  size_t dim() const { return features.dim(1); }
};

namespace detail {

inline DiffTensor init_conv(ParameterStore& store, const std::string& name,
                            size_t c_out, size_t c_in, size_t w, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(c_in * w));
  std::vector<double> vals(c_out * c_in * w);
  for (double& v : vals) v = rng.uniform(-bound, bound);
  return store.create(name, {c_out, c_in, w}, std::move(vals));
}

}  // namespace detail

class SeparatorModel {
 public:
  SeparatorModel(const SeparatorConfig& cfg, ParameterStore& store, std::uint64_t seed)
      : cfg_(cfg) {
    cfg_.validate();
    Rng rng(hash_combine(seed, fnv1a("separator")));
    const size_t n = cfg_.encoder_filters;
    const size_t ch = cfg_.masker_channels;
    enc_w_ = detail::init_conv(store, "enc.w", n, 1, cfg_.encoder_kernel, rng);
    dec_w_ = detail::init_conv(store, "dec.w", n, 1, cfg_.encoder_kernel, rng);
    in_proj_ = detail::init_conv(store, "masker.in.w", ch, n, 1, rng);
    const auto dil = cfg_.effective_dilations();
    for (size_t l = 0; l < cfg_.num_layers; ++l) {
      const std::string p = "masker.layer" + std::to_string(l);
      Layer layer;
      layer.conv = detail::init_conv(store, p + ".conv.w", ch, ch, 3, rng);
      layer.ln_gain = store.create(p + ".ln.gain", {ch}, std::vector<double>(ch, 1.0));
      layer.ln_bias = store.create(p + ".ln.bias", {ch}, std::vector<double>(ch, 0.0));
      layer.prelu_slope = store.create(p + ".prelu.slope", {1}, {0.25});
      layer.dilation = dil[l];
      layers_.push_back(std::move(layer));
    }
    if (cfg_.film_enabled) {
      heads_.push_back(detail::init_conv(store, "masker.head.w", n, ch, 1, rng));
    } else {
      for (size_t s = 0; s < cfg_.num_sources; ++s)
        heads_.push_back(detail::init_conv(
            store, "masker.head" + std::to_string(s) + ".w", n, ch, 1, rng));
    }
  }

  const SeparatorConfig& config() const { return cfg_; }

  // conv1d at stride kernel/2 followed by ReLU.
  DiffTensor encode(const DiffTensor& mixture) const {
    if (mixture.ndim() != 2 || mixture.dim(0) != 1)
      throw std::invalid_argument("encode: expected [1 x t] mixture");
    if (mixture.dim(1) < cfg_.encoder_kernel)
      throw std::invalid_argument("encode: input shorter than encoder kernel");
    return relu(conv1d(mixture, enc_w_, static_cast<int>(cfg_.encoder_stride())));
  }

  // Unconditioned masks: one body pass, per-source heads (shared head when
  // film_enabled, which then yields identical masks per source).
  std::vector<DiffTensor> separator_masks(const DiffTensor& features) const {
    const DiffTensor h = body(features, nullptr);
    std::vector<DiffTensor> masks;
    masks.reserve(cfg_.num_sources);
    for (size_t s = 0; s < cfg_.num_sources; ++s)
      masks.push_back(sigmoid(conv1d(h, head(s), 1)));
    return masks;
  }

  // Conditioned masks: one body pass per source with that source's FiLM
  // modulation after each group, through the shared head.
  std::vector<DiffTensor> separator_masks(const DiffTensor& features,
                                          const std::vector<FilmParams>& film) const {
    if (!cfg_.film_enabled)
      throw std::invalid_argument("separator_masks: FiLM params on a model built "
                                  "with film_enabled=false");
    if (film.size() != cfg_.num_sources)
      throw std::invalid_argument("separator_masks: need one FilmParams per source");
    std::vector<DiffTensor> masks;
    masks.reserve(cfg_.num_sources);
    for (size_t s = 0; s < cfg_.num_sources; ++s) {
      check_film(film[s]);
      const DiffTensor h = body(features, &film[s]);
      masks.push_back(sigmoid(conv1d(h, heads_[0], 1)));
    }
    return masks;
  }

  // conv_transpose1d with the encoder stride, fitted to the mixture length.
  DiffTensor decode(const DiffTensor& masked_features, size_t mixture_len) const {
    DiffTensor wave =
        conv_transpose1d(masked_features, dec_w_, static_cast<int>(cfg_.encoder_stride()));
    return fit_cols(wave, mixture_len);
  }

  std::vector<DiffTensor> forward(const DiffTensor& mixture) const {
    const size_t t = mixture.dim(1);
    const DiffTensor feats = encode(mixture);
    std::vector<DiffTensor> out;
    for (const auto& m : separator_masks(feats)) out.push_back(decode(mul(m, feats), t));
    return out;
  }

  std::vector<DiffTensor> forward(const DiffTensor& mixture,
                                  const std::vector<FilmParams>& film) const {
    const size_t t = mixture.dim(1);
    const DiffTensor feats = encode(mixture);
    std::vector<DiffTensor> out;
    for (const auto& m : separator_masks(feats, film))
      out.push_back(decode(mul(m, feats), t));
    return out;
  }

  std::vector<Waveform> separate(const Waveform& mixture) const {
    return to_waveforms(forward(as_input(mixture)), mixture.sample_rate);
  }

  std::vector<Waveform> separate(const Waveform& mixture,
                                 const std::vector<FilmParams>& film) const {
    return to_waveforms(forward(as_input(mixture), film), mixture.sample_rate);
  }

  static DiffTensor as_input(const Waveform& w) {
    return DiffTensor::from_values({1, w.size()}, w.samples);
  }

  static std::vector<Waveform> to_waveforms(const std::vector<DiffTensor>& ests,
                                            int rate) {
    std::vector<Waveform> out;
    out.reserve(ests.size());
    for (const auto& e : ests) out.emplace_back(e.data(), rate);
    return out;
  }

 private:
  struct Layer {
    DiffTensor conv, ln_gain, ln_bias, prelu_slope;
    int dilation = 1;
  };

  const DiffTensor& head(size_t source) const {
    return heads_.size() == 1 ? heads_[0] : heads_.at(source);
  }

  void check_film(const FilmParams& p) const {
    if (p.gamma.size() != cfg_.num_groups() || p.beta.size() != cfg_.num_groups())
      throw std::invalid_argument("FilmParams: expected one (gamma, beta) per group");
    for (size_t g = 0; g < p.gamma.size(); ++g)
      if (p.gamma[g].numel() != cfg_.masker_channels ||
          p.beta[g].numel() != cfg_.masker_channels)
        throw std::invalid_argument("FilmParams: vector length must equal masker channels");
  }

  DiffTensor body(const DiffTensor& features, const FilmParams* film) const {
    if (features.ndim() != 2 || features.dim(0) != cfg_.encoder_filters)
      throw std::invalid_argument("separator_masks: features shape mismatch");
    DiffTensor h = conv1d(features, in_proj_, 1);
    for (size_t l = 0; l < layers_.size(); ++l) {
      const Layer& layer = layers_[l];
      DiffTensor u = conv1d(h, layer.conv, 1, layer.dilation, /*causal=*/true);
      u = channel_add(channel_mul(channel_norm(u), layer.ln_gain), layer.ln_bias);
      u = prelu(u, layer.prelu_slope);
      h = add(h, u);
      if (film && (l + 1) % cfg_.group_size == 0) {
        const size_t g = l / cfg_.group_size;
        h = channel_add(channel_mul(h, film->gamma[g]), film->beta[g]);
      }
    }
    return h;
  }

  SeparatorConfig cfg_;
  DiffTensor enc_w_, dec_w_, in_proj_;
  std::vector<Layer> layers_;
  std::vector<DiffTensor> heads_;
};

// Maps a speaker embedding to per-group (gamma, beta). Weights start near
// zero so a fresh generator emits the identity modulation.
class FilmGenerator {
 public:
  FilmGenerator(size_t embed_dim, size_t channels, size_t num_groups,
                ParameterStore& store, std::uint64_t seed)
      : embed_dim_(embed_dim), channels_(channels), num_groups_(num_groups) {
    Rng rng(hash_combine(seed, fnv1a("film_generator")));
    for (size_t g = 0; g < num_groups; ++g) {
      const std::string p = "film.group" + std::to_string(g);
      Site site;
      site.w_gamma = init_small(store, p + ".gamma.w", rng);
      site.b_gamma = store.create(p + ".gamma.b", {channels},
                                  std::vector<double>(channels, 0.0));
      site.w_beta = init_small(store, p + ".beta.w", rng);
      site.b_beta = store.create(p + ".beta.b", {channels},
                                 std::vector<double>(channels, 0.0));
      sites_.push_back(std::move(site));
    }
  }

  size_t embed_dim() const { return embed_dim_; }
  size_t num_groups() const { return num_groups_; }

  FilmParams generate(const SpeakerEmbedding& e) const {
    if (e.values.size() != embed_dim_)
      throw std::invalid_argument("FilmGenerator: embedding dim " +
                                  std::to_string(e.values.size()) + ", expected " +
                                  std::to_string(embed_dim_));
    const DiffTensor ev = DiffTensor::from_values({embed_dim_}, e.values);
    FilmParams out;
    for (const auto& site : sites_) {
      out.gamma.push_back(add_const(add(matmul(site.w_gamma, ev), site.b_gamma), 1.0));
      out.beta.push_back(add(matmul(site.w_beta, ev), site.b_beta));
    }
    return out;
  }

  std::vector<FilmParams> generate(const std::vector<SpeakerEmbedding>& embeds) const {
    std::vector<FilmParams> out;
    out.reserve(embeds.size());
    for (const auto& e : embeds) out.push_back(generate(e));
    return out;
  }

 private:
  DiffTensor init_small(ParameterStore& store, const std::string& name, Rng& rng) {
    std::vector<double> vals(channels_ * embed_dim_);
    for (double& v : vals) v = rng.uniform(-1e-5, 1e-5);
    return store.create(name, {channels_, embed_dim_}, std::move(vals));
  }

  struct Site {
    DiffTensor w_gamma, b_gamma, w_beta, b_beta;
  };
  size_t embed_dim_, channels_, num_groups_;
  std::vector<Site> sites_;
};

// Fixed differentiable frame features: per frame, DFT magnitude via cos/sin
// matrices, log(1 + .), then mel-style triangular pooling to `mel_dim`.
class SpectralEmbedder {
 public:
  explicit SpectralEmbedder(int sample_rate = 16000, size_t win = 400,
                            size_t hop = 160, size_t mel_dim = 24)
      : sample_rate_(sample_rate), win_(win), hop_(hop), mel_dim_(mel_dim) {
    const size_t bins = win / 2 + 1;
    std::vector<double> cosm(win * bins), sinm(win * bins);
    for (size_t i = 0; i < win; ++i)
      for (size_t b = 0; b < bins; ++b) {
        const double ang =
            2.0 * M_PI * static_cast<double>(b) * static_cast<double>(i) /
            static_cast<double>(win);
        cosm[i * bins + b] = std::cos(ang);
        sinm[i * bins + b] = std::sin(ang);
      }
    cos_mat_ = DiffTensor::from_values({win, bins}, std::move(cosm));
    sin_mat_ = DiffTensor::from_values({win, bins}, std::move(sinm));

    // triangular mel filters over bin frequencies
    auto hz_to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
    auto mel_to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
    const double f_min = 50.0, f_max = sample_rate / 2.0;
    std::vector<double> centers(mel_dim + 2);
    for (size_t k = 0; k < mel_dim + 2; ++k) {
      const double m = hz_to_mel(f_min) + (hz_to_mel(f_max) - hz_to_mel(f_min)) *
                                              static_cast<double>(k) /
                                              static_cast<double>(mel_dim + 1);
      centers[k] = mel_to_hz(m);
    }
    std::vector<double> fb(bins * mel_dim, 0.0);
    for (size_t b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate / static_cast<double>(win);
      for (size_t k = 0; k < mel_dim; ++k) {
        const double lo = centers[k], mid = centers[k + 1], hi = centers[k + 2];
        double v = 0.0;
        if (f > lo && f < hi) v = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
        fb[b * mel_dim + k] = v;
      }
    }
    mel_mat_ = DiffTensor::from_values({bins, mel_dim}, std::move(fb));
  }

  int sample_rate() const { return sample_rate_; }
  size_t win() const { return win_; }
  size_t hop() const { return hop_; }
  size_t dim() const { return mel_dim_; }

  // Differentiable w.r.t. the waveform tensor; the matrices are constants.
  EmbeddingSequence embed(const DiffTensor& wave) const {
    const size_t len = wave.ndim() == 1 ? wave.dim(0) : wave.dim(1);
    if (len < win_)
      throw std::invalid_argument("spectral_embed: input shorter than one frame");
    const DiffTensor frames = frame_signal(wave, win_, hop_);
    const DiffTensor re = matmul(frames, cos_mat_);
    const DiffTensor im = matmul(frames, sin_mat_);
    const DiffTensor mag = sqrt(add_const(add(mul(re, re), mul(im, im)), 1e-12));
    EmbeddingSequence seq;
    seq.features = matmul(log1p(mag), mel_mat_);
    seq.frame_hop = hop_;
    return seq;
  }

  EmbeddingSequence embed(const Waveform& w) const {
    return embed(DiffTensor::from_values({w.size()}, w.samples));
  }

 private:
  int sample_rate_;
  size_t win_, hop_, mel_dim_;
  DiffTensor cos_mat_, sin_mat_, mel_mat_;
};

// Small trainable conv stack over spectral frames; emits a unit-norm
// embedding. The classification head used in pretraining lives in a separate
// store so saved embedder checkpoints never contain it.
class SiEmbedder {
 public:
  SiEmbedder(std::shared_ptr<const SpectralEmbedder> features, size_t embed_dim,
             ParameterStore& store, std::uint64_t seed)
      : features_(std::move(features)), embed_dim_(embed_dim) {
    Rng rng(hash_combine(seed, fnv1a("si_embedder")));
    const size_t in = features_->dim();
    conv1_ = detail::init_conv(store, "si.conv1.w", hidden_, in, 5, rng);
    conv2_ = detail::init_conv(store, "si.conv2.w", hidden_, hidden_, 3, rng);
    proj_ = detail::init_conv(store, "si.proj.w", embed_dim_, hidden_, 1, rng);
  }

  size_t embed_dim() const { return embed_dim_; }
  const SpectralEmbedder& features() const { return *features_; }

  // [t] or [1 x t] waveform tensor -> unit-norm [embed_dim].
  DiffTensor forward(const DiffTensor& wave) const {
    const DiffTensor seq = features_->embed(wave).features;  // [M x D]
    DiffTensor h = transpose(seq);                           // [D x M]
    h = relu(conv1d(h, conv1_, 2));
    h = relu(conv1d(h, conv2_, 1));
    h = conv1d(h, proj_, 1);
    DiffTensor pooled = mean(h, 1);  // [embed_dim]
    const DiffTensor norm = sqrt(add_const(sq_l2(pooled), 1e-12));
    return div(pooled, norm);
  }

  SpeakerEmbedding embed(const Waveform& w) const {
    const DiffTensor v = forward(DiffTensor::from_values({w.size()}, w.samples));
    SpeakerEmbedding e;
    e.values = v.data();
    return e;
  }

 private:
  std::shared_ptr<const SpectralEmbedder> features_;
  size_t embed_dim_;
  size_t hidden_ = 32;
  DiffTensor conv1_, conv2_, proj_;
};

// Oracle embeddings straight from the clean sources.
inline std::vector<SpeakerEmbedding> oracle_embeddings(
    const SiEmbedder& si, const std::vector<Waveform>& clean_sources) {
  std::vector<SpeakerEmbedding> out;
  out.reserve(clean_sources.size());
  for (const auto& s : clean_sources) out.push_back(si.embed(s));
  return out;
}

// Full conditioned separation: embeddings -> FiLM -> per-source masking.
// Source order follows embedding order.
inline std::vector<Waveform> conditioned_separate(
    const SeparatorModel& model, const FilmGenerator& generator,
    const Waveform& mixture, const std::vector<SpeakerEmbedding>& embeddings) {
  if (embeddings.size() != model.config().num_sources)
    throw std::invalid_argument("conditioned_separate: need one embedding per source");
  return model.separate(mixture, generator.generate(embeddings));
}

}  // namespace sepkit
