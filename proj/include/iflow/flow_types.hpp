#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iflow/error.hpp"

namespace iflow {

// Dense 2-channel displacement grid in pixel units. resolution_scale tags
// whether values live on the full-resolution grid (1) or the /8 grid (8);
// displacements are expressed in that grid's own cell units.
struct FlowField {
    int width = 0;
    int height = 0;
    int resolution_scale = 1;
    std::vector<float> u;
    std::vector<float> v;

    FlowField() = default;
    FlowField(int w, int h, int scale = 1)
        : width(w),
          height(h),
          resolution_scale(scale),
          u(static_cast<std::size_t>(w) * h, 0.f),
          v(static_cast<std::size_t>(w) * h, 0.f) {}

    std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
    std::size_t size() const { return u.size(); }
};

// Per-pixel indicator of absent matches; 1 = missing.
struct MissingMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> missing;

    MissingMask() = default;
    MissingMask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), missing(static_cast<std::size_t>(w) * h, fill) {}

    std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
};

// Per-pixel edge strength in [0, 1].
struct EdgeMap {
    int width = 0;
    int height = 0;
    std::vector<float> strength;

    EdgeMap() = default;
    EdgeMap(int w, int h, float fill = 0.f)
        : width(w), height(h), strength(static_cast<std::size_t>(w) * h, fill) {}

    std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
};

// Generic per-pixel boolean raster; 1 = in set.
using PixelMask = std::vector<std::uint8_t>;

// One pixel correspondence (x1,y1) in I -> (x2,y2) in I'.
struct Match {
    int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

using MatchList = std::vector<Match>;

// 8-bit RGB raster.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // 3 bytes per pixel, row-major

    Image() = default;
    Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}
};

}  // namespace iflow
