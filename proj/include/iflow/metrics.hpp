#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iflow/flow_types.hpp"

namespace iflow {

// Evaluation metrics. Unlike the losses these are exact (no smoothing term
// inside the root) and are normally computed at full resolution on
// upsampled predictions.

// Per-pixel endpoint errors.
std::vector<double> epe_image(const FlowField& pred, const FlowField& gt);

// Mean endpoint error, optionally over a region. Empty regions are an error.
double mean_epe(const FlowField& pred, const FlowField& gt, const PixelMask* region = nullptr);

// Percentage of region pixels with EPE strictly greater than tau.
double percent_out(const FlowField& pred, const FlowField& gt, double tau = 3.0,
                   const PixelMask* region = nullptr);

// Per-pixel improvement of method b over method a: (a - b) / (a + b),
// defined as 0 where both errors vanish. Positive values mean b is better.
std::vector<double> improvement_index(const std::vector<double>& epe_a,
                                      const std::vector<double>& epe_b);

// Pixel groups in the style of the noisy/occluded/missing breakdown:
//   noisy    — a match exists and its error against gt exceeds 3,
//   occluded — per the supplied occlusion mask,
//   missing  — no match and not occluded (disjoint from occluded).
struct PixelGroups {
    PixelMask noisy;
    PixelMask occluded;
    PixelMask missing;
};

PixelGroups pixel_groups(const FlowField& input_flow, const MissingMask& input_mask,
                         const FlowField& gt, const MissingMask* occlusion = nullptr);

// Exact Euclidean distance transform to the nearest edge pixel (edges
// binarized at 0.5). No edge pixels -> every distance is +inf.
std::vector<double> distance_from_edges(const EdgeMap& edges);

// Mean improvement index per integer distance bin (bin = floor(distance)),
// split into missing / non-missing pixels. With no edge pixels everything
// lands in one unbounded bin, reported with bin = -1.
struct DistanceProfileBin {
    int bin = 0;
    double mean_ii_missing = 0.0;
    std::int64_t count_missing = 0;
    double mean_ii_non_missing = 0.0;
    std::int64_t count_non_missing = 0;
};

std::vector<DistanceProfileBin> distance_from_edges_profile(const std::vector<double>& ii_map,
                                                            const EdgeMap& edges,
                                                            const PixelMask& missing);

// One evaluated image pair plus the pixel-weighted aggregate row.
struct EvalRow {
    std::string name;
    std::int64_t pixels = 0;
    double epe = 0.0;
    double pct_out = 0.0;
    // Group means; count 0 renders as an empty CSV cell.
    double epe_noisy = 0.0;
    std::int64_t noisy_pixels = 0;
    double epe_occluded = 0.0;
    std::int64_t occluded_pixels = 0;
    double epe_missing = 0.0;
    std::int64_t missing_pixels = 0;
    double pct_out_noc = 0.0;
    std::int64_t noc_pixels = 0;
    // Only populated in two-method comparison mode.
    std::optional<double> ii_missing;
    std::optional<double> ii_non_missing;
};

struct EvalReport {
    std::vector<EvalRow> per_image;
    EvalRow aggregate;  // name "aggregate", pixel-weighted

    std::string to_csv() const;
};

EvalReport aggregate_rows(std::vector<EvalRow> rows);

}  // namespace iflow
