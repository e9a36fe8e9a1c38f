#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "iflow/ad.hpp"
#include "iflow/flow_types.hpp"

namespace iflow {

// Differentiable training losses, computed on the /8 grid. Every Euclidean
// distance is smoothed with kEpsStab under the root so a zero-distance
// pixel still has a finite gradient.

// Endpoint error between two flow vectors: sqrt(du^2 + dv^2 + eps).
double epe(float u1, float v1, float u2, float v2);

// Per-pixel distance map between two {h,w,2} grids -> {h,w,1}.
ad::Var epe_map(ad::Var a, ad::Var b);

// Mean endpoint error over pixels. With a validity mask, excluded pixels
// drop out of both the sum and the count.
ad::Var epe_loss(ad::Var pred, ad::Var gt, const MissingMask* valid = nullptr);

// Lateral dependency loss: for each pixel, compare the distance to its
// upper and left neighbors in the prediction against the same distances in
// the ground truth; average the absolute mismatch over the pixel count.
// Border terms without a neighbor are omitted while n stays h*w. With a
// validity mask, a term needs both endpoints valid and n counts valid
// pixels only.
ad::Var ld_loss(ad::Var pred, ad::Var gt, const MissingMask* valid = nullptr);

struct LossReport {
    std::vector<double> epe_per_layer;
    std::vector<double> ld_per_layer;
    double total = 0.0;
    std::int64_t pixels = 0;

    // The weighted recombination of the per-layer entries; equals `total`
    // up to accumulated rounding.
    double recombined(const std::vector<float>& weights, bool use_ld) const;
};

struct NetLossOptions {
    std::vector<float> weights;  // one per detour
    bool use_ld = true;
    const MissingMask* valid = nullptr;
};

// Weighted sum over detour outputs of (epe + ld) against the shared ground
// truth.
std::pair<ad::Var, LossReport> net_loss(const std::vector<ad::Var>& detours, ad::Var gt,
                                        const NetLossOptions& options);

// Tape-side constant holding a flow field as an {h,w,2} leaf.
ad::Var flow_leaf(ad::Tape& tape, const FlowField& flow);

}  // namespace iflow
