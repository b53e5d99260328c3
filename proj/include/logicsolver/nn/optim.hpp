#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "logicsolver/error.hpp"
#include "logicsolver/nn/tensor.hpp"
#include "logicsolver/rng.hpp"

namespace logicsolver::nn {

/// Named trainable parameters, kept in registration order.
class ParamStore {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<double> values) {
    if (index_.count(name)) throw Error(Errc::ConfigError, "duplicate parameter name '" + name + "'");
    Tensor t = Tensor::from_values(std::move(shape), std::move(values), /*requires_grad=*/true);
    index_[name] = entries_.size();
    entries_.emplace_back(name, t);
    return t;
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); fan_in is the last dimension.
  Tensor add_uniform(const std::string& name, Shape shape, Rng& rng) {
    const double fan_in = static_cast<double>(shape.empty() ? 1 : shape.back());
    const double bound = 1.0 / std::sqrt(fan_in);
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return add(name, std::move(shape), std::move(v));
  }

  Tensor add_zeros(const std::string& name, Shape shape) {
    const std::size_t n = shape_size(shape);
    return add(name, std::move(shape), std::vector<double>(n, 0.0));
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error(Errc::SchemaError, "no parameter named '" + name + "'");
    return entries_[it->second].second;
  }
  Tensor& get(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const ParamStore&>(*this).get(name));
  }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::map<std::string, std::vector<double>> first;
  std::map<std::string, std::vector<double>> second;
};

/// Bias-corrected Adam with decoupled weight decay; clears gradients after.
/// `lr_of` gives the learning rate for each parameter name.
inline void adam_step(ParamStore& store, AdamState& state, const std::function<double(const std::string&)>& lr_of,
                      double weight_decay) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [name, param] : store.entries()) {
    auto& m = state.first[name];
    auto& v = state.second[name];
    if (m.size() != param.size()) {
      m.assign(param.size(), 0.0);
      v.assign(param.size(), 0.0);
    }
    const double lr = lr_of(name);
    auto values = param.mutable_values();
    std::span<const double> grad = param.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      values[i] -= lr * (mhat / (std::sqrt(vhat) + state.epsilon) + weight_decay * values[i]);
    }
    param.zero_grad();
  }
}

inline void adam_step(ParamStore& store, AdamState& state, double lr, double weight_decay) {
  adam_step(store, state, [lr](const std::string&) { return lr; }, weight_decay);
}

/// Halves every 25 epochs.
inline double lr_schedule(std::size_t epoch, double base_lr) {
  return base_lr * std::pow(0.5, static_cast<double>(epoch / 25));
}

// ---------------------------------------------------------------------------
// Checkpoints: "<path>" holds the tensors, "<path>.json" the manifest.
// Tensor archive: magic "LSCKPT01", u64 count, then per tensor u32 name
// length, name bytes, u32 rank, u64 dims, float64 payload; all little-endian.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void write_le(std::string& out, T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    out.append(bytes.data(), sizeof(T));
  } else {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    out.append(bytes, sizeof(T));
  }
}

template <typename T>
T read_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error(Errc::SchemaError, "checkpoint archive is truncated");
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), in.data() + pos, sizeof(T));
  pos += sizeof(T);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

inline constexpr char kCheckpointMagic[] = "LSCKPT01";

}  // namespace detail

inline std::string serialize_tensors(const ParamStore& store) {
  std::string out(detail::kCheckpointMagic, 8);
  detail::write_le<std::uint64_t>(out, store.entries().size());
  for (const auto& [name, t] : store.entries()) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::write_le<std::uint64_t>(out, d);
    for (double v : t.values()) detail::write_le<double>(out, v);
  }
  return out;
}

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

inline std::vector<NamedTensor> deserialize_tensors(const std::string& bytes) {
  if (bytes.size() < 8 || bytes.compare(0, 8, detail::kCheckpointMagic) != 0) {
    throw Error(Errc::SchemaError, "not a checkpoint archive");
  }
  std::size_t pos = 8;
  const auto count = detail::read_le<std::uint64_t>(bytes, pos);
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto len = detail::read_le<std::uint32_t>(bytes, pos);
    if (pos + len > bytes.size()) throw Error(Errc::SchemaError, "checkpoint archive is truncated");
    t.name = bytes.substr(pos, len);
    pos += len;
    const auto rank = detail::read_le<std::uint32_t>(bytes, pos);
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(detail::read_le<std::uint64_t>(bytes, pos));
    t.values.resize(shape_size(t.shape));
    for (double& v : t.values) v = detail::read_le<double>(bytes, pos);
    out.push_back(std::move(t));
  }
  if (pos != bytes.size()) throw Error(Errc::SchemaError, "trailing bytes in checkpoint archive");
  return out;
}

/// Copies archived values into a store with identical names and shapes.
inline void restore_tensors(ParamStore& store, const std::vector<NamedTensor>& tensors) {
  if (tensors.size() != store.entries().size()) {
    throw Error(Errc::SchemaError, "checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                                       std::to_string(store.entries().size()));
  }
  for (const auto& t : tensors) {
    Tensor& p = store.get(t.name);
    if (p.shape() != t.shape) {
      throw Error(Errc::ShapeMismatch, "parameter '" + t.name + "' is " + shape_text(p.shape()) +
                                           " in the model but " + shape_text(t.shape) + " in the checkpoint");
    }
    std::copy(t.values.begin(), t.values.end(), p.mutable_values().begin());
  }
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::IoError, "short write to '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void save_checkpoint(const std::string& path, const ParamStore& store, nlohmann::ordered_json manifest) {
  auto tensors = nlohmann::ordered_json::array();
  for (const auto& [name, t] : store.entries()) tensors.push_back({{"name", name}, {"shape", t.shape()}});
  manifest["tensors"] = std::move(tensors);
  write_file(path, serialize_tensors(store));
  write_file(path + ".json", manifest.dump(2) + "\n");
}

inline nlohmann::json load_manifest(const std::string& path) {
  const std::string text = read_file(path + ".json");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::SchemaError, path + ".json: " + e.what());
  }
}

}  // namespace logicsolver::nn
