#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "iflow/flow_types.hpp"

// On-disk formats. Everything binary is little-endian.
//
//   .flo   — float 202021.25 magic, int32 width, int32 height, then
//            row-major interleaved (u, v) float32 pairs.
//   matches — text, one "x1 y1 x2 y2 [extra columns ignored]" per line.
//   PGM (P5, maxval 255) — masks (255 = missing) and 8-bit edge maps.
//   raw edge map — "EDGF" magic, uint32 width, uint32 height, float32 data.
//   PPM (P6) — color renderings.

namespace iflow {

FlowField read_flo(const std::string& path);
void write_flo(const FlowField& flow, const std::string& path);

// One match per nonempty line; sub-pixel coordinates are rounded to the
// nearest integer pixel. Trailing columns (scores etc.) are ignored.
MatchList parse_matches(std::istream& in);
MatchList read_matches(const std::string& path);

// Accepts a binary PGM or the raw float format (sniffed by magic bytes).
// 8-bit values are normalized by 255; everything is clamped to [0, 1].
EdgeMap read_edge_map(const std::string& path);
void write_edge_map_pgm(const EdgeMap& edges, const std::string& path);
void write_edge_map_raw(const EdgeMap& edges, const std::string& path);

MissingMask read_mask_pgm(const std::string& path);
void write_mask_pgm(const MissingMask& mask, const std::string& path);

void write_ppm(const Image& img, const std::string& path);

// Standard optical-flow color wheel: direction selects the hue, magnitude
// relative to max_magnitude sets the saturation, zero flow renders white.
// max_magnitude absent -> the field's own maximum.
Image flow_to_color(const FlowField& flow, std::optional<float> max_magnitude = std::nullopt);

}  // namespace iflow
