// sepkit/optim.hpp
//
// Named parameter store with Adam state, plus the binary checkpoint format:
// versioned header, then name-sorted parameters as (name, shape, raw 64-bit
// little-endian values).

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sepkit/common.hpp"
#include "sepkit/tensor.hpp"

namespace sepkit {

class ParameterStore {
 public:
  // Registers a fresh trainable parameter. Names must be unique.
  DiffTensor create(const std::string& name, std::vector<size_t> shape,
                    std::vector<double> values) {
    if (slots_.count(name))
      throw std::invalid_argument("ParameterStore: duplicate parameter '" + name + "'");
    DiffTensor p = DiffTensor::from_values(std::move(shape), std::move(values), true);
    Slot slot;
    slot.param = p;
    slot.m.assign(p.numel(), 0.0);
    slot.v.assign(p.numel(), 0.0);
    slots_.emplace(name, std::move(slot));
    return p;
  }

  DiffTensor get(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end())
      throw std::invalid_argument("ParameterStore: unknown parameter '" + name + "'");
    return it->second.param;
  }

  bool has(const std::string& name) const { return slots_.count(name) != 0; }
  size_t size() const { return slots_.size(); }
  long step_count() const { return step_; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(slots_.size());
    for (const auto& [name, _] : slots_) out.push_back(name);
    return out;  // std::map iteration is already name-sorted
  }

  void zero_grad() {
    for (auto& [_, slot] : slots_) slot.param.zero_grad();
  }

  // Standard Adam with bias correction. Gradients are left untouched; the
  // caller zeroes them.
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8) {
    if (lr <= 0.0) throw std::invalid_argument("adam_step: lr must be positive");
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
    for (auto& [_, slot] : slots_) {
      auto& data = slot.param.data();
      const auto& grad = slot.param.grad();
      for (size_t i = 0; i < data.size(); ++i) {
        const double g = grad[i];
        slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
        slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
        const double mhat = slot.m[i] / bc1;
        const double vhat = slot.v[i] / bc2;
        data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  // Value snapshot/restore, used for best-checkpoint retention.
  std::map<std::string, std::vector<double>> export_values() const {
    std::map<std::string, std::vector<double>> out;
    for (const auto& [name, slot] : slots_) out[name] = slot.param.data();
    return out;
  }

  void import_values(const std::map<std::string, std::vector<double>>& values) {
    for (const auto& [name, vals] : values) {
      auto it = slots_.find(name);
      if (it == slots_.end())
        throw std::invalid_argument("ParameterStore: import of unknown parameter '" +
                                    name + "'");
      if (vals.size() != it->second.param.numel())
        throw std::invalid_argument("ParameterStore: size mismatch importing '" + name +
                                    "'");
      it->second.param.data() = vals;
    }
  }

 private:
  struct Slot {
    DiffTensor param;
    std::vector<double> m, v;
  };
  std::map<std::string, Slot> slots_;
  long step_ = 0;

  friend void save_checkpoint(const ParameterStore&, const std::string&);
  friend void load_checkpoint(ParameterStore&, const std::string&);
};

inline void adam_step(ParameterStore& store, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
  store.adam_step(lr, beta1, beta2, eps);
}

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v & 0xffffffffULL));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(os, bits);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t lo = get_u32(is);
  std::uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

inline double get_f64(std::istream& is) {
  std::uint64_t bits = get_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'P', 'K', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const ParameterStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for write");
  os.write(kCheckpointMagic, 8);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(store.slots_.size()));
  for (const auto& [name, slot] : store.slots_) {  // map order == name-sorted
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& shape = slot.param.shape();
    detail::put_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (size_t d : shape) detail::put_u64(os, d);
    for (double v : slot.param.data()) detail::put_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

// Loads values into an already constructed store; every stored parameter must
// exist with a matching shape.
inline void load_checkpoint(ParameterStore& store, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: '" + path + "' is not a sepkit checkpoint");
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  const std::uint32_t count = detail::get_u32(is);
  if (count != store.slots_.size())
    throw std::runtime_error("checkpoint: parameter count mismatch (file " +
                             std::to_string(count) + ", model " +
                             std::to_string(store.slots_.size()) + ")");
  for (std::uint32_t p = 0; p < count; ++p) {
    const std::uint32_t name_len = detail::get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    const std::uint32_t ndim = detail::get_u32(is);
    std::vector<size_t> shape(ndim);
    for (auto& d : shape) d = static_cast<size_t>(detail::get_u64(is));
    auto it = store.slots_.find(name);
    if (it == store.slots_.end())
      throw std::runtime_error("checkpoint: parameter '" + name +
                               "' not present in model");
    if (it->second.param.shape() != shape)
      throw std::runtime_error("checkpoint: shape mismatch for parameter '" + name + "'");
    for (double& v : it->second.param.data()) v = detail::get_f64(is);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
  }
}

}  // namespace sepkit
