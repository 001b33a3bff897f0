#include <catch2/catch.hpp>

#include <cstdio>
#include <fstream>

#include "sepkit/signals.hpp"
#include "support.hpp"

using namespace sepkit;

namespace {

// hand-built RIFF bytes, independent of write_wav
std::vector<unsigned char> wav_bytes(std::uint16_t format, std::uint16_t channels,
                                     std::uint32_t rate, std::uint16_t bits,
                                     const std::vector<std::int16_t>& samples) {
  std::vector<unsigned char> b;
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
  };
  auto u16 = [&](std::uint16_t v) {
    b.push_back(static_cast<unsigned char>(v & 0xff));
    b.push_back(static_cast<unsigned char>(v >> 8));
  };
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  u32(36 + data_bytes);
  b.insert(b.end(), {'W', 'A', 'V', 'E'});
  b.insert(b.end(), {'f', 'm', 't', ' '});
  u32(16);
  u16(format);
  u16(channels);
  u32(rate);
  u32(rate * channels * bits / 8);
  u16(static_cast<std::uint16_t>(channels * bits / 8));
  u16(bits);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  u32(data_bytes);
  for (std::int16_t s : samples) u16(static_cast<std::uint16_t>(s));
  return b;
}

void dump(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
}

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("read_wav maps int16 to [-1, 1) by 1/32768") {
  TempFile f("sig_read.wav");
  dump(f.path, wav_bytes(1, 1, 8000, 16, {0, 16384, -32768}));
  const Waveform w = read_wav(f.path);
  REQUIRE(w.sample_rate == 8000);
  REQUIRE(w.samples == std::vector<double>{0.0, 0.5, -1.0});
}

TEST_CASE("read_wav distinct error paths") {
  REQUIRE_THROWS_WITH(read_wav("definitely_missing.wav"),
                      Catch::Contains("file not found"));

  TempFile stereo("sig_stereo.wav");
  dump(stereo.path, wav_bytes(1, 2, 8000, 16, {0, 0, 0, 0}));
  REQUIRE_THROWS_WITH(read_wav(stereo.path), Catch::Contains("multichannel"));

  TempFile nonpcm("sig_float.wav");
  dump(nonpcm.path, wav_bytes(3, 1, 8000, 16, {0, 0}));
  REQUIRE_THROWS_WITH(read_wav(nonpcm.path), Catch::Contains("not PCM"));

  TempFile trunc("sig_trunc.wav");
  auto bytes = wav_bytes(1, 1, 8000, 16, {1, 2, 3, 4});
  bytes.resize(bytes.size() - 4);  // cut into the data chunk
  dump(trunc.path, bytes);
  REQUIRE_THROWS_WITH(read_wav(trunc.path), Catch::Contains("truncated"));
}

TEST_CASE("write_wav emits a 44-byte header and quantized data") {
  TempFile f("sig_write.wav");
  write_wav(f.path, Waveform({0.0}, 8000));
  const auto bytes = slurp(f.path);
  REQUIRE(bytes.size() == 46);  // 44-byte header + one int16 sample
  REQUIRE(bytes[44] == 0);
  REQUIRE(bytes[45] == 0);
}

TEST_CASE("write_wav rejects unwritable paths") {
  REQUIRE_THROWS_WITH(write_wav("no_such_dir/x.wav", Waveform({0.0}, 8000)),
                      Catch::Contains("cannot open"));
}

TEST_CASE("write_wav clamps out-of-range samples to max int16") {
  TempFile f("sig_clamp.wav");
  write_wav(f.path, Waveform({1.5, -2.0}, 8000));
  const Waveform w = read_wav(f.path);
  REQUIRE(w.samples[0] == Approx(32767.0 / 32768.0));
  REQUIRE(w.samples[1] == Approx(-1.0));
}

TEST_CASE("wav round-trip is within one quantization step and deterministic") {
  Rng rng(42);
  const Waveform w = test_support::random_waveform(500, 16000, rng, 0.9);
  TempFile f1("sig_rt1.wav"), f2("sig_rt2.wav");
  write_wav(f1.path, w);
  write_wav(f2.path, w);
  REQUIRE(slurp(f1.path) == slurp(f2.path));  // byte-identical writes

  const Waveform r = read_wav(f1.path);
  REQUIRE(r.size() == w.size());
  for (size_t i = 0; i < w.size(); ++i)
    REQUIRE(std::abs(r.samples[i] - w.samples[i]) <= 1.0 / 32768.0);
}

TEST_CASE("segment emits only full chunks") {
  Rng rng(3);
  const Waveform w = test_support::random_waveform(7 * 8000, 8000, rng);
  const auto segs = segment(w, 3.0, "utt0");
  REQUIRE(segs.size() == 2);
  for (const auto& s : segs) {
    REQUIRE(s.waveform.size() == 24000);
    REQUIRE(s.source_id == "utt0");
  }
  REQUIRE(segs[0].offset_samples == 0);
  REQUIRE(segs[1].offset_samples == 24000);

  // concatenation equals the input prefix
  for (size_t i = 0; i < 48000; ++i)
    REQUIRE(segs[i / 24000].waveform.samples[i % 24000] == w.samples[i]);

  const Waveform shorter = test_support::random_waveform(2 * 8000, 8000, rng);
  REQUIRE(segment(shorter, 3.0).empty());

  REQUIRE_THROWS_AS(segment(w, 0.0), std::invalid_argument);
}

TEST_CASE("resample identity and constants") {
  Rng rng(4);
  const Waveform w = test_support::random_waveform(1000, 16000, rng);
  const Waveform same = resample(w, 16000);
  REQUIRE(same.samples == w.samples);

  const Waveform c = resample(Waveform(std::vector<double>(400, 0.25), 16000), 10000);
  REQUIRE(c.samples.size() == 250);
  for (double v : c.samples) REQUIRE(v == Approx(0.25));
}

TEST_CASE("resampled sine tracks the closed-form sine") {
  const int src = 16000, dst = 10000;
  const double f = 100.0, dur = 0.5;
  std::vector<double> sine(static_cast<size_t>(src * dur));
  for (size_t i = 0; i < sine.size(); ++i)
    sine[i] = std::sin(2.0 * M_PI * f * static_cast<double>(i) / src);
  const Waveform out = resample(Waveform(sine, src), dst);

  std::vector<double> analytic(out.size());
  for (size_t i = 0; i < out.size(); ++i)
    analytic[i] = std::sin(2.0 * M_PI * f * static_cast<double>(i) / dst);

  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < out.size(); ++i) {
    dot += out.samples[i] * analytic[i];
    na += out.samples[i] * out.samples[i];
    nb += analytic[i] * analytic[i];
  }
  REQUIRE(dot / std::sqrt(na * nb) > 0.999);
}
