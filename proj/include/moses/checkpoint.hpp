// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary model snapshots. Layout, all integers little-endian:
//   "MOSESCKP" | u32 version | u64 header length | header JSON (config, vocabulary)
//   | u64 record count | records | u64 FNV-1a of every preceding byte
// A record is u32 name length, name bytes, u32 rank, u64 extents, then f64 values
// in row-major order.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "moses/model.hpp"

namespace moses {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a64(std::string_view bytes);

std::string serialize_checkpoint(const ModelState& s);
// Throws CorruptFileError on any structural or checksum failure.
ModelState parse_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelState& s, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);
// Also rejects snapshots whose config differs from `expected` with ConfigError.
ModelState load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

// Reads a whole file; InputError when it cannot be opened.
std::string read_file(const std::filesystem::path& path);
// Writes through a sibling temporary and renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace moses
