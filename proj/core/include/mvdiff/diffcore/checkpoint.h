// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "mvdiff/diffcore/param_store.h"

namespace mvdiff::diff {

// Binary layout (little-endian):
//   "MVDK" | u32 version | u64 record count |
//   per record: u32 name length | UTF-8 name | u8 dtype | u32 rank | u64 dims[rank] | raw values
inline constexpr char kCheckpointMagic[4] = {'M', 'V', 'D', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

template <typename T>
void write_checkpoint(std::ostream& out, const ParamStore<T>& store);
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& store);

/// Reads every record. Records must carry the dtype matching T.
template <typename T>
ParamStore<T> read_checkpoint(std::istream& in);
template <typename T>
ParamStore<T> load_checkpoint(const std::filesystem::path& path);

extern template void write_checkpoint<float>(std::ostream&, const ParamStore<float>&);
extern template void write_checkpoint<double>(std::ostream&, const ParamStore<double>&);
extern template void save_checkpoint<float>(const std::filesystem::path&, const ParamStore<float>&);
extern template void save_checkpoint<double>(const std::filesystem::path&, const ParamStore<double>&);
extern template ParamStore<float> read_checkpoint<float>(std::istream&);
extern template ParamStore<double> read_checkpoint<double>(std::istream&);
extern template ParamStore<float> load_checkpoint<float>(const std::filesystem::path&);
extern template ParamStore<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace mvdiff::diff
