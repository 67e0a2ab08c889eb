#pragma once

// Versioned binary model container. Layout (all integers little-endian
// uint32, all reals little-endian IEEE-754 binary64):
//
//   magic      "FKAN"                      4 bytes
//   version    1
//   flags      bit 0: base activation enabled
//   layers     L
//   per layer:
//     in_dim, out_dim, order, intervals
//     lo, hi                               (binary64)
//     coeffs       in*out*(intervals+order) values, edge-major (i*out + j), basis-minor
//     base_weight  in*out values, row-major (i, j)
//     spline_scale in*out values, row-major (i, j)
//   checksum   FNV-1a 64 over every preceding byte (uint64)

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fairkan/kan.hpp"

namespace fairkan {

inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> serialize(const KanNetwork<double>& net);
KanNetwork<double> deserialize(const std::vector<std::uint8_t>& bytes);

/// Human-readable dump of the same content.
std::string export_text(const KanNetwork<double>& net);

/// Writes via a temporary file and rename, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
void save_model(const KanNetwork<double>& net, const std::filesystem::path& path);
KanNetwork<double> load_model(const std::filesystem::path& path);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace fairkan
