#pragma once

#include <cstdint>
#include <string>

#include "ecgxai/core/io.hpp"
#include "ecgxai/tensor/parameters.hpp"

namespace ecgxai::tensor {

// Binary layout, all integers and floats little-endian:
//   "ECGXCKP1" | u32 entry count | entries...
//   entry: u32 name length | name bytes | u32 ndim | u64 dims[ndim] | f32 payload
// Batch-norm statistics are stored as "<name>.running_mean" / ".running_var".
inline constexpr std::string_view kCheckpointMagic = "ECGXCKP1";

template <typename T>
std::string serialize_parameters(const ParameterStore<T>& store) {
  io::ByteWriter w;
  w.put_bytes(kCheckpointMagic);
  const auto& bn = store.batch_norm_names();
  w.put(static_cast<std::uint32_t>(store.entries().size() + 2 * bn.size()));
  auto entry = [&w](const std::string& name, const Shape& shape, const auto& values) {
    w.put(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name);
    w.put(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.put(static_cast<std::uint64_t>(d));
    for (auto v : values) w.put(static_cast<float>(v));
  };
  for (const auto& [name, t] : store.entries()) entry(name, t.shape(), t.values());
  for (const auto& name : bn) {
    const auto& s = store.batch_norm(name);
    entry(name + ".running_mean", Shape{s.running_mean.size()}, s.running_mean);
    entry(name + ".running_var", Shape{s.running_var.size()}, s.running_var);
  }
  return w.str();
}

template <typename T>
void save_parameters(const ParameterStore<T>& store, const io::fs::path& path) {
  io::atomic_write(path, serialize_parameters(store));
}

/// Overwrites the values of `store` from a checkpoint; every stored name must
/// exist in `store` with the same shape and every parameter must be present.
template <typename T>
void deserialize_parameters(ParameterStore<T>& store, std::string_view bytes) {
  io::ByteReader r(bytes);
  if (r.get_bytes(kCheckpointMagic.size()) != kCheckpointMagic)
    throw InvalidInputError("checkpoint: bad magic");
  const auto count = r.get<std::uint32_t>();
  std::size_t params_seen = 0;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::string name = r.get_bytes(r.get<std::uint32_t>());
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    const std::size_t n = numel_of(shape);
    std::vector<T> values(n);
    for (auto& v : values) v = static_cast<T>(r.get<float>());
    if (store.contains(name)) {
      auto& t = store.get(name);
      if (t.shape() != shape)
        throw InvalidInputError("checkpoint: shape mismatch for '" + name + "': stored " + shape_str(shape) +
                                ", expected " + shape_str(t.shape()));
      std::copy(values.begin(), values.end(), t.values().begin());
      ++params_seen;
      continue;
    }
    auto suffix_at = [&](std::string_view suffix) {
      return name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    const bool is_mean = suffix_at(".running_mean");
    const bool is_var = suffix_at(".running_var");
    if (!is_mean && !is_var) throw InvalidInputError("checkpoint: unknown parameter '" + name + "'");
    const std::string base = name.substr(0, name.rfind('.'));
    auto& s = store.batch_norm(base);
    auto& target = is_mean ? s.running_mean : s.running_var;
    if (target.size() != n) throw InvalidInputError("checkpoint: size mismatch for '" + name + "'");
    target = std::move(values);
  }
  if (!r.done()) throw InvalidInputError("checkpoint: trailing bytes");
  if (params_seen != store.entries().size())
    throw InvalidInputError("checkpoint: missing parameters (" + std::to_string(params_seen) + " of " +
                            std::to_string(store.entries().size()) + ")");
}

template <typename T>
void load_parameters(ParameterStore<T>& store, const io::fs::path& path) {
  deserialize_parameters(store, io::read_file(path));
}

}  // namespace ecgxai::tensor
