#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace dsla {

// Writes via a temporary file in the same directory, then renames, so a
// failed write never leaves a partial output behind.
void atomic_write(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

// FNV-1a over the bytes, rendered as 16 hex digits; used to stamp outputs
// with the config they came from.
std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);

// "# key=value" provenance header lines for CSV outputs.
std::string csv_provenance(const std::string& config_hash, std::uint64_t seed);

}  // namespace dsla
