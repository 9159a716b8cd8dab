#pragma once

// On-disk layout of a `.caad` grounding space file (all integers little-endian):
//
//   [8]      magic "CAADSPC1"
//   [4]      u32 header length H
//   [H]      UTF-8 JSON header
//   [n * S]  fixed-stride records: dim x f32 embedding, then vocab_size x {f32|f16} logits
//   [4]      u32 CRC-32 (zlib polynomial) of the record region
//
// The header carries dim, vocab_size, chunk_size, count, ids, logit_dtype, the checksum
// algorithm, and run-length provenance [[source_id, first_step, run_length], ...].

#include "caad/grounding_space.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>

namespace caad {

inline constexpr char kSpaceMagic[8] = {'C', 'A', 'A', 'D', 'S', 'P', 'C', '1'};
inline constexpr int kSpaceFormatVersion = 1;

std::uint32_t crc32(std::span<const std::byte> bytes);

std::size_t record_stride_bytes(const SpaceMetadata& meta);

/// Serializes a sealed space. Deterministic: equal spaces produce identical bytes.
std::vector<std::byte> serialize_space(const GroundingSpace& space);
/// Throws FormatError on bad magic/version, malformed header, truncation or checksum mismatch.
GroundingSpace deserialize_space(std::span<const std::byte> bytes);

void save(const GroundingSpace& space, const std::filesystem::path& path);
GroundingSpace load(const std::filesystem::path& path);

/// Parses and validates only the magic and JSON header of a space file.
nlohmann::json read_space_header(const std::filesystem::path& path);

/// Summary document: counts, dims, dtype, ids and per-dimension embedding mean/std.
nlohmann::json inspect(const GroundingSpace& space);

}  // namespace caad
