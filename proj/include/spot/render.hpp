#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "spot/imagery.hpp"
#include "spot/priors.hpp"

namespace spot {

/// 8-bit RGB (or gray) PNG, single IDAT, no filtering.
std::vector<std::uint8_t> encode_png(const Image& image);

std::string base64_encode(std::span<const std::uint8_t> bytes);

/// Viridis sample at t in [0,1], as "#rrggbb".
std::string viridis_hex(double t);

/// SVG in image pixel coordinates (pixel centers at integers): the raster
/// embedded as a base64 PNG, one polyline per token from its first to last
/// row, per-step vertex markers colored dark to bright by step index, a dot
/// at each start, and the final k×k window of each token.
std::string render_trajectory_svg(const Image& image, std::span<const PlacementSet> rows, int window, double scale = 8.0);

/// Reads a trajectory CSV, checks its shape against the image, writes the SVG.
void render_trajectory_file(const std::filesystem::path& trajectory_csv, const std::filesystem::path& image_path,
                            const std::filesystem::path& out_svg, int window);

}  // namespace spot
