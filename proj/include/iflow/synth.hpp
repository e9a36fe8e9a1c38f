#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iflow/flow_types.hpp"

namespace iflow {

// Deterministic synthetic flow data: a constant-flow background with a few
// rectangles/ellipses moving rigidly over it. Edges come from the motion
// boundaries of the ground truth itself, which is exactly the signal the
// edge channel is meant to carry.
struct SynthSpec {
    std::uint64_t seed = 1;
    int count = 1;  // samples to generate
    int width = 64;
    int height = 64;
    int num_shapes = 3;
    float disp_range = 12.f;      // displacement components drawn in [-r, r] px
    float missing_frac = 0.5f;    // in [0, 1)
    float noise_frac = 0.05f;     // in [0, 1)
    float noise_mag = 8.f;        // px, uniform per component

    void validate() const;
};

struct SynthSample {
    FlowField gt;        // dense, full resolution
    FlowField sparse;    // corrupted input flow
    MissingMask mask;    // 1 = missing in sparse
    EdgeMap edges;       // 1 exactly on motion-boundary pixels
    std::string id;
};

// Pure function of the spec. Missing pixels are grown as connected blobs
// plus uniform salt, hitting the requested fraction to the pixel.
std::vector<SynthSample> gen_moving_shapes(const SynthSpec& spec);

// The illusory-contour probe: a centered square region moving against the
// background, its ground truth visible to the loss but never marked in the
// edge map. The input is masked in a band around the square's contour and
// inside four discs sitting on its corners; only the disc outlines appear
// as edges. Geometry defaults follow the usual proportions (square side =
// size/2, disc radius = side/4, band = size/16 per side).
struct KanizsaGeometry {
    int size = 128;           // square image extent
    float square_side = 0.f;  // 0 -> size/2
    float disc_radius = 0.f;  // 0 -> square_side/4
    float band_halfwidth = 0.f;  // 0 -> size/16

    float side() const { return square_side > 0.f ? square_side : size * 0.5f; }
    float radius() const { return disc_radius > 0.f ? disc_radius : side() * 0.25f; }
    float band() const { return band_halfwidth > 0.f ? band_halfwidth : size / 16.f; }
    void validate() const;

    // Predicates over pixel centers, shared by generator and tests.
    bool inside_square(int x, int y) const;
    double square_contour_distance(int x, int y) const;  // unsigned
    bool inside_any_disc(int x, int y) const;
    bool on_disc_outline(int x, int y) const;
    bool masked(int x, int y) const;
};

SynthSample gen_kanizsa(const KanizsaGeometry& geometry, float inner_u, float inner_v,
                        float background_u, float background_v);

// Pixels within the masked contour band but outside the discs; the region
// the probe is judged on.
PixelMask kanizsa_band(const KanizsaGeometry& geometry);

// Filesystem layout: four files per sample plus a manifest of
// "gt sparse mask edges" path rows.
struct DatasetPaths {
    std::string gt, sparse, mask, edges;
};
std::vector<DatasetPaths> write_dataset(const std::vector<SynthSample>& samples,
                                        const std::string& out_dir,
                                        const std::string& manifest_name = "manifest.txt");
std::vector<DatasetPaths> read_manifest(const std::string& manifest_path);

}  // namespace iflow
