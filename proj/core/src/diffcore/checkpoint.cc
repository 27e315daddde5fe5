// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/diffcore/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <type_traits>

namespace mvdiff::diff {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename U>
void put(std::ostream& out, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& in) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) throw FormatError("checkpoint truncated");
  return v;
}

template <typename T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::kFloat32 : DType::kFloat64;
}

}  // namespace

template <typename T>
void write_checkpoint(std::ostream& out, const ParamStore<T>& store) {
  out.write(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, store.size());
  for (const auto& e : store.entries()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of<T>()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(e.value.raw()), static_cast<std::streamsize>(e.value.numel() * sizeof(T)));
  }
  if (!out) throw FormatError("failed writing checkpoint");
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& store) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path.string());
  write_checkpoint(out, store);
}

template <typename T>
ParamStore<T> read_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get<std::uint64_t>(in);
  ParamStore<T> store;
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto name_len = get<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw FormatError("checkpoint truncated in record name");
    const auto dtype = static_cast<DType>(get<std::uint8_t>(in));
    if (dtype != dtype_of<T>()) throw FormatError("checkpoint dtype mismatch for " + name);
    const auto rank = get<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in));
    Tensor<T> value(shape);
    in.read(reinterpret_cast<char*>(value.raw()), static_cast<std::streamsize>(value.numel() * sizeof(T)));
    if (!in) throw FormatError("checkpoint truncated in values of " + name);
    store.add(std::move(name), std::move(value));
  }
  return store;
}

template <typename T>
ParamStore<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path.string());
  return read_checkpoint<T>(in);
}

template void write_checkpoint<float>(std::ostream&, const ParamStore<float>&);
template void write_checkpoint<double>(std::ostream&, const ParamStore<double>&);
template void save_checkpoint<float>(const std::filesystem::path&, const ParamStore<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const ParamStore<double>&);
template ParamStore<float> read_checkpoint<float>(std::istream&);
template ParamStore<double> read_checkpoint<double>(std::istream&);
template ParamStore<float> load_checkpoint<float>(const std::filesystem::path&);
template ParamStore<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace mvdiff::diff
