#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "atl/activation.hpp"

namespace atl {

/// On-disk layout:
///   "ATLCACHE1"
///   u32 LE manifest length, manifest JSON (model_id, layers, penultimate_dim,
///     record_count, records[{example_id, label, label_id, split}])
///   per record: u32 block count, then per block u32 float count followed by
///     that many float32 LE values; blocks are the LAVs in layer order, then
///     the penultimate vector.
void write_cache(const ActivationCache& cache, const std::filesystem::path& path);

/// Errors: Version for a foreign cache version, Truncated when the file ends
/// early, Schema for any manifest/payload disagreement.
ActivationCache read_cache(const std::filesystem::path& path);

std::string serialize_cache(const ActivationCache& cache);
ActivationCache deserialize_cache(const std::string& bytes);

/// 64-bit FNV-1a over the serialized bytes, as 16 hex digits.
std::string cache_digest(const ActivationCache& cache);
std::string digest_bytes(const std::string& bytes);

}  // namespace atl
