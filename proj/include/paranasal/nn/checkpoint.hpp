#pragma once

// Binary checkpoint format. Parameters are written as raw scalar arrays
// in collection order, so a reload restores bit-identical weights on the
// same platform.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "paranasal/core.hpp"
#include "paranasal/nn/tensor.hpp"

namespace paranasal::nn {

struct CheckpointInfo {
  int epoch = 0;
  double val_loss = 0;
};

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), std::streamsize(n));
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), std::streamsize(n));
  if (std::size_t(is.gcount()) != n) throw format_error("checkpoint truncated");
}

template <class U>
void write_pod(std::ostream& os, U v) {
  write_bytes(os, &v, sizeof v);
}

template <class U>
U read_pod(std::istream& is) {
  U v;
  read_bytes(is, &v, sizeof v);
  return v;
}

}  // namespace detail

inline constexpr char checkpoint_magic[4] = {'P', 'N', 'C', 'K'};

template <class T>
void save_checkpoint(const std::string& path, const std::vector<ParamRef<T>>& params,
                     std::uint64_t config_digest, const CheckpointInfo& info) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot write " + path);
  detail::write_bytes(os, checkpoint_magic, 4);
  detail::write_pod<std::uint32_t>(os, 1);  // format version
  detail::write_pod<std::uint64_t>(os, config_digest);
  detail::write_pod<std::uint32_t>(os, std::uint32_t(sizeof(T)));
  detail::write_pod<std::int32_t>(os, std::int32_t(info.epoch));
  detail::write_pod<double>(os, info.val_loss);
  detail::write_pod<std::uint64_t>(os, std::uint64_t(params.size()));
  for (const auto& p : params) {
    detail::write_pod<std::uint32_t>(os, std::uint32_t(p.name.size()));
    detail::write_bytes(os, p.name.data(), p.name.size());
    detail::write_pod<std::uint64_t>(os, std::uint64_t(p.size));
    detail::write_bytes(os, p.value, p.size * sizeof(T));
  }
  if (!os) throw io_error("write failed for " + path);
}

template <class T>
CheckpointInfo load_checkpoint(const std::string& path, std::vector<ParamRef<T>>& params,
                               std::uint64_t config_digest) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot read " + path);
  char magic[4];
  detail::read_bytes(is, magic, 4);
  if (std::memcmp(magic, checkpoint_magic, 4) != 0)
    throw format_error(path + " is not a checkpoint");
  if (detail::read_pod<std::uint32_t>(is) != 1)
    throw format_error("unsupported checkpoint version in " + path);
  if (detail::read_pod<std::uint64_t>(is) != config_digest)
    throw format_error(path + " was written for a different network configuration");
  if (detail::read_pod<std::uint32_t>(is) != sizeof(T))
    throw format_error(path + " uses a different scalar width");
  CheckpointInfo info;
  info.epoch = int(detail::read_pod<std::int32_t>(is));
  info.val_loss = detail::read_pod<double>(is);
  auto count = detail::read_pod<std::uint64_t>(is);
  if (count != params.size()) throw format_error("parameter list mismatch in " + path);
  for (auto& p : params) {
    auto name_len = detail::read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    detail::read_bytes(is, name.data(), name_len);
    if (name != p.name) throw format_error("parameter order mismatch at " + name);
    auto n = detail::read_pod<std::uint64_t>(is);
    if (n != p.size) throw format_error("parameter size mismatch at " + name);
    detail::read_bytes(is, p.value, p.size * sizeof(T));
  }
  return info;
}

// In-memory copies used to keep the best-validation weights during training.
template <class T>
std::vector<std::vector<T>> snapshot_params(const std::vector<ParamRef<T>>& params) {
  std::vector<std::vector<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.value, p.value + p.size);
  return out;
}

template <class T>
void restore_params(const std::vector<ParamRef<T>>& params,
                    const std::vector<std::vector<T>>& snap) {
  if (snap.size() != params.size()) throw std::invalid_argument("snapshot mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (snap[i].size() != params[i].size) throw std::invalid_argument("snapshot mismatch");
    std::copy(snap[i].begin(), snap[i].end(), params[i].value);
  }
}

}  // namespace paranasal::nn
