// sepkit/signals.hpp
//
// Waveform container and WAV file I/O (RIFF little-endian, 16-bit PCM mono),
// plus segmentation and linear-interpolation resampling.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sepkit {

struct Waveform {
  std::vector<double> samples;  // nominally in [-1, 1]
  int sample_rate = 16000;

  Waveform() = default;
  Waveform(std::vector<double> s, int rate) : samples(std::move(s)), sample_rate(rate) {
    if (sample_rate <= 0)
      throw std::invalid_argument("Waveform: sample_rate must be positive");
  }

  size_t size() const { return samples.size(); }
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct AudioSegment {
  std::string source_id;
  size_t offset_samples = 0;
  Waveform waveform;
};

namespace detail {

inline std::uint32_t rd_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t rd_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void wr_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

inline void wr_u16le(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

}  // namespace detail

// Reads a RIFF/WAVE file containing 16-bit PCM mono data. Integer samples
// map to [-1, 1) via division by 32768.
inline Waveform read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("wav: file not found: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("wav: not a RIFF/WAVE file: " + path);

  bool have_fmt = false;
  int sample_rate = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    char id[5] = {0};
    std::memcpy(id, &bytes[pos], 4);
    const std::uint32_t chunk_size = detail::rd_u32le(&bytes[pos + 4]);
    const size_t body = pos + 8;
    if (body + chunk_size > bytes.size())
      throw std::runtime_error("wav: truncated chunk '" + std::string(id) + "' in " +
                               path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw std::runtime_error("wav: truncated chunk 'fmt '");
      const std::uint16_t format = detail::rd_u16le(&bytes[body]);
      const std::uint16_t channels = detail::rd_u16le(&bytes[body + 2]);
      sample_rate = static_cast<int>(detail::rd_u32le(&bytes[body + 4]));
      const std::uint16_t bits = detail::rd_u16le(&bytes[body + 14]);
      if (format != 1)
        throw std::runtime_error("wav: not PCM (format " + std::to_string(format) +
                                 "): " + path);
      if (channels != 1)
        throw std::runtime_error("wav: multichannel file (channels=" +
                                 std::to_string(channels) + "), expected mono: " + path);
      if (bits != 16)
        throw std::runtime_error("wav: not 16-bit PCM (bits=" + std::to_string(bits) +
                                 "): " + path);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw std::runtime_error("wav: data chunk before fmt chunk: " + path);
      const size_t n = chunk_size / 2;
      std::vector<double> samples(n);
      for (size_t i = 0; i < n; ++i) {
        const std::uint16_t u = detail::rd_u16le(&bytes[body + 2 * i]);
        const std::int16_t v = static_cast<std::int16_t>(u);
        samples[i] = static_cast<double>(v) / 32768.0;
      }
      return Waveform(std::move(samples), sample_rate);
    }
    pos = body + chunk_size + (chunk_size & 1);  // chunks are word-aligned
  }
  throw std::runtime_error("wav: missing data chunk: " + path);
}

// Writes 16-bit PCM mono. Samples are clamped to [-1, 1 - 1/32768] before
// quantization (mixtures can transiently exceed full scale).
inline void write_wav(const std::string& path, const Waveform& w) {
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::wr_u32le(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  detail::wr_u32le(out, 16);
  detail::wr_u16le(out, 1);  // PCM
  detail::wr_u16le(out, 1);  // mono
  detail::wr_u32le(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::wr_u32le(out, static_cast<std::uint32_t>(w.sample_rate * 2));  // byte rate
  detail::wr_u16le(out, 2);   // block align
  detail::wr_u16le(out, 16);  // bits per sample
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::wr_u32le(out, data_bytes);
  for (double s : w.samples) {
    double c = s;
    if (c < -1.0) c = -1.0;
    const double max_s = 1.0 - 1.0 / 32768.0;
    if (c > max_s) c = max_s;
    const long q = std::lround(c * 32768.0);
    detail::wr_u16le(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("wav: cannot open for write: " + path);
  os.write(reinterpret_cast<const char*>(out.data()),
           static_cast<std::streamsize>(out.size()));
  if (!os) throw std::runtime_error("wav: write failed: " + path);
}

// Non-overlapping consecutive chunks of floor(seconds * rate) samples; the
// final short remainder is dropped.
inline std::vector<AudioSegment> segment(const Waveform& w, double seconds,
                                         const std::string& source_id = "") {
  if (seconds <= 0.0) throw std::invalid_argument("segment: seconds must be positive");
  const size_t chunk = static_cast<size_t>(seconds * w.sample_rate);
  std::vector<AudioSegment> out;
  if (chunk == 0 || w.samples.size() < chunk) return out;
  const size_t count = w.samples.size() / chunk;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    AudioSegment seg;
    seg.source_id = source_id;
    seg.offset_samples = i * chunk;
    seg.waveform.sample_rate = w.sample_rate;
    seg.waveform.samples.assign(w.samples.begin() + static_cast<long>(i * chunk),
                                w.samples.begin() + static_cast<long>((i + 1) * chunk));
    out.push_back(std::move(seg));
  }
  return out;
}

// Linear-interpolation resampling; output length = round(len * target/source).
// Documented approximation: adequate for the 10 kHz intelligibility-metric
// convention at the tolerances used here.
inline Waveform resample(const Waveform& w, int target_rate) {
  if (target_rate <= 0) throw std::invalid_argument("resample: target_rate must be > 0");
  if (target_rate == w.sample_rate) return w;
  const size_t n = w.samples.size();
  Waveform out;
  out.sample_rate = target_rate;
  if (n == 0) return out;
  const size_t out_len = static_cast<size_t>(
      std::llround(static_cast<double>(n) * target_rate / w.sample_rate));
  out.samples.resize(out_len);
  const double step = static_cast<double>(w.sample_rate) / target_rate;
  for (size_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * step;
    const size_t j = static_cast<size_t>(pos);
    if (j + 1 >= n) {
      out.samples[i] = w.samples[n - 1];
    } else {
      const double frac = pos - static_cast<double>(j);
      out.samples[i] = (1.0 - frac) * w.samples[j] + frac * w.samples[j + 1];
    }
  }
  return out;
}

}  // namespace sepkit
