#include "iflow/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "iflow/flow_io.hpp"

namespace iflow {

namespace {

float uniform_in(std::mt19937_64& rng, float lo, float hi) {
    const double u = double(rng() >> 40) * (1.0 / 16777216.0);
    return float(lo + (hi - lo) * u);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(rng() % std::uint64_t(hi - lo + 1));
}

// Motion boundaries of a piecewise-constant field: a pixel is an edge when
// any 4-neighbor carries a different flow.
EdgeMap motion_boundary_edges(const FlowField& gt) {
    EdgeMap e(gt.width, gt.height, 0.f);
    auto differs = [&gt](std::size_t a, std::size_t b) {
        return gt.u[a] != gt.u[b] || gt.v[a] != gt.v[b];
    };
    for (int y = 0; y < gt.height; ++y) {
        for (int x = 0; x < gt.width; ++x) {
            const std::size_t i = gt.idx(x, y);
            bool edge = false;
            if (x > 0) edge = edge || differs(i, gt.idx(x - 1, y));
            if (x + 1 < gt.width) edge = edge || differs(i, gt.idx(x + 1, y));
            if (y > 0) edge = edge || differs(i, gt.idx(x, y - 1));
            if (y + 1 < gt.height) edge = edge || differs(i, gt.idx(x, y + 1));
            if (edge) e.strength[i] = 1.f;
        }
    }
    return e;
}

// Budgeted flood fill from a seed pixel: breadth-first growth with the
// neighbor order shuffled per pixel, giving compact blobs with organic
// borders that blank out whole /8 blocks. seed < 0 picks a random free
// pixel. Returns the number of pixels marked.
int grow_blob(std::mt19937_64& rng, MissingMask& mask, int budget, long seed_pixel = -1) {
    const int w = mask.width, h = mask.height;
    if (budget <= 0) return 0;
    int sx, sy;
    if (seed_pixel >= 0) {
        sx = static_cast<int>(seed_pixel % w);
        sy = static_cast<int>(seed_pixel / w);
    } else {
        sx = uniform_int(rng, 0, w - 1);
        sy = uniform_int(rng, 0, h - 1);
        for (int tries = 0; tries < 20 && mask.missing[mask.idx(sx, sy)]; ++tries) {
            sx = uniform_int(rng, 0, w - 1);
            sy = uniform_int(rng, 0, h - 1);
        }
    }
    if (mask.missing[mask.idx(sx, sy)]) return 0;

    std::vector<std::size_t> queue;
    int grown = 0;
    auto mark = [&](std::size_t i) {
        mask.missing[i] = 1;
        queue.push_back(i);
        ++grown;
    };
    mark(mask.idx(sx, sy));
    for (std::size_t head = 0; grown < budget && head < queue.size(); ++head) {
        const std::size_t i = queue[head];
        const int x = static_cast<int>(i % std::size_t(w));
        const int y = static_cast<int>(i / std::size_t(w));
        int order[4] = {0, 1, 2, 3};
        for (int k = 3; k > 0; --k) std::swap(order[k], order[uniform_int(rng, 0, k)]);
        for (int k = 0; k < 4 && grown < budget; ++k) {
            const int nx = x + (order[k] == 0 ? 1 : order[k] == 1 ? -1 : 0);
            const int ny = y + (order[k] == 2 ? 1 : order[k] == 3 ? -1 : 0);
            if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
            const std::size_t j = mask.idx(nx, ny);
            if (!mask.missing[j]) mark(j);
        }
    }
    return grown;
}

}  // namespace

void SynthSpec::validate() const {
    if (count < 1) throw ConfigError("synth: count must be >= 1");
    if (width < 1 || height < 1) throw ConfigError("synth: size must be positive");
    if (missing_frac < 0.f || missing_frac >= 1.f)
        throw ConfigError("synth: missing_frac must be in [0, 1)");
    if (noise_frac < 0.f || noise_frac >= 1.f)
        throw ConfigError("synth: noise_frac must be in [0, 1)");
    if (num_shapes < 0) throw ConfigError("synth: num_shapes must be >= 0");
    if (disp_range < 0.f || noise_mag < 0.f)
        throw ConfigError("synth: displacement/noise magnitudes must be >= 0");
}

std::vector<SynthSample> gen_moving_shapes(const SynthSpec& spec) {
    spec.validate();
    const int w = spec.width, h = spec.height;
    int num_shapes = spec.num_shapes;
    const int min_half = 2;
    if (num_shapes > 0 && (w < 4 * min_half || h < 4 * min_half)) {
        std::cerr << "synth: image " << w << "x" << h
                  << " too small for shapes, generating background only\n";
        num_shapes = 0;
    }

    std::vector<SynthSample> samples;
    samples.reserve(static_cast<std::size_t>(spec.count));
    for (int s = 0; s < spec.count; ++s) {
        // one independent stream per sample so sets are prefix-stable
        std::mt19937_64 rng(spec.seed * 0x9e3779b97f4a7c15ull + std::uint64_t(s) + 1);
        SynthSample sample;
        sample.gt = FlowField(w, h);
        const float bu = uniform_in(rng, -spec.disp_range, spec.disp_range);
        const float bv = uniform_in(rng, -spec.disp_range, spec.disp_range);
        std::fill(sample.gt.u.begin(), sample.gt.u.end(), bu);
        std::fill(sample.gt.v.begin(), sample.gt.v.end(), bv);

        for (int sh = 0; sh < num_shapes; ++sh) {
            const bool ellipse = (rng() & 1) != 0;
            // shapes span a few /8 cells: big enough to survive block
            // averaging, small enough that a missing blob can swallow one
            const int hw = uniform_int(rng, std::max(min_half, w / 8), std::max(min_half + 1, w / 4));
            const int hh = uniform_int(rng, std::max(min_half, h / 8), std::max(min_half + 1, h / 4));
            const int cx = uniform_int(rng, hw, w - 1 - hw);
            const int cy = uniform_int(rng, hh, h - 1 - hh);
            const float su = uniform_in(rng, -spec.disp_range, spec.disp_range);
            const float sv = uniform_in(rng, -spec.disp_range, spec.disp_range);
            for (int y = cy - hh; y <= cy + hh; ++y) {
                for (int x = cx - hw; x <= cx + hw; ++x) {
                    if (ellipse) {
                        const double dx = double(x - cx) / hw, dy = double(y - cy) / hh;
                        if (dx * dx + dy * dy > 1.0) continue;
                    }
                    sample.gt.u[sample.gt.idx(x, y)] = su;
                    sample.gt.v[sample.gt.idx(x, y)] = sv;
                }
            }
        }

        sample.edges = motion_boundary_edges(sample.gt);

        // corrupt: exact missing budget as blobs + salt
        sample.mask = MissingMask(w, h, 0);
        const int n = w * h;
        const int missing_target = static_cast<int>(std::floor(double(spec.missing_frac) * n));
        if (missing_target > 0) {
            const int blob_budget = missing_target * 9 / 10;
            const int nblobs = 2;
            int grown = 0;
            for (int b = 0; b < nblobs && grown < blob_budget; ++b)
                grown += grow_blob(rng, sample.mask, (blob_budget - grown) / (nblobs - b));
            int remaining = missing_target - grown;
            while (remaining > 0) {
                const std::size_t i = rng() % std::size_t(n);
                if (!sample.mask.missing[i]) {
                    sample.mask.missing[i] = 1;
                    --remaining;
                }
            }
        }

        // False matches mimic matcher failures: mostly contiguous clusters
        // that share one wrong displacement (so they survive the /8 block
        // mean as coherent spurious structure), plus per-pixel salt.
        sample.sparse = sample.gt;
        const int noise_target = static_cast<int>(std::floor(double(spec.noise_frac) * n));
        if (noise_target > 0) {
            MissingMask occupied = sample.mask;  // blobs grow over known pixels only
            // matcher false matches cluster against the missing regions, so
            // seed each noise blob at a known pixel bordering one if possible
            std::vector<std::size_t> border;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const std::size_t i = sample.mask.idx(x, y);
                    if (sample.mask.missing[i]) continue;
                    const bool adj = (x > 0 && sample.mask.missing[i - 1]) ||
                                     (x + 1 < w && sample.mask.missing[i + 1]) ||
                                     (y > 0 && sample.mask.missing[i - std::size_t(w)]) ||
                                     (y + 1 < h && sample.mask.missing[i + std::size_t(w)]);
                    if (adj) border.push_back(i);
                }
            const int blob_budget = noise_target * 8 / 10;
            const int nblobs = 2;
            int clustered = 0;
            for (int b = 0; b < nblobs && clustered < blob_budget; ++b) {
                MissingMask before = occupied;
                const long seed_px =
                    border.empty() ? -1 : long(border[rng() % border.size()]);
                const int grown = grow_blob(rng, occupied,
                                            (blob_budget - clustered) / (nblobs - b), seed_px);
                const float nu = uniform_in(rng, -spec.noise_mag, spec.noise_mag);
                const float nv = uniform_in(rng, -spec.noise_mag, spec.noise_mag);
                for (std::size_t i = 0; i < occupied.missing.size(); ++i) {
                    if (occupied.missing[i] && !before.missing[i]) {
                        sample.sparse.u[i] += nu;
                        sample.sparse.v[i] += nv;
                    }
                }
                clustered += grown;
            }
            int remaining = noise_target - clustered;
            while (remaining > 0) {
                const std::size_t i = rng() % std::size_t(n);
                if (occupied.missing[i]) continue;
                occupied.missing[i] = 1;
                sample.sparse.u[i] += uniform_in(rng, -spec.noise_mag, spec.noise_mag);
                sample.sparse.v[i] += uniform_in(rng, -spec.noise_mag, spec.noise_mag);
                --remaining;
            }
        }
        for (std::size_t i = 0; i < sample.sparse.size(); ++i) {
            if (sample.mask.missing[i]) {
                sample.sparse.u[i] = 0.f;
                sample.sparse.v[i] = 0.f;
            }
        }

        std::ostringstream id;
        id << "s" << std::setfill('0') << std::setw(4) << s;
        sample.id = id.str();
        samples.push_back(std::move(sample));
    }
    return samples;
}

void KanizsaGeometry::validate() const {
    if (size < 16) throw ConfigError("kanizsa: size must be >= 16");
    const float half = side() * 0.5f;
    const float c = size * 0.5f;
    if (c - half - radius() < 0.f || c + half + radius() > float(size))
        throw ConfigError("kanizsa: discs do not fit inside the image");
}

bool KanizsaGeometry::inside_square(int x, int y) const {
    const float c = size * 0.5f;
    const float half = side() * 0.5f;
    return std::fabs(x + 0.5f - c) < half && std::fabs(y + 0.5f - c) < half;
}

double KanizsaGeometry::square_contour_distance(int x, int y) const {
    const double c = size * 0.5;
    const double half = side() * 0.5;
    const double ax = std::fabs(x + 0.5 - c) - half;
    const double ay = std::fabs(y + 0.5 - c) - half;
    // box SDF magnitude
    const double ox = std::max(ax, 0.0), oy = std::max(ay, 0.0);
    const double outside = std::hypot(ox, oy);
    const double inside = std::min(std::max(ax, ay), 0.0);
    return std::fabs(outside + inside);
}

namespace {
void disc_centers(const KanizsaGeometry& g, double cx[4], double cy[4]) {
    const double c = g.size * 0.5;
    const double half = g.side() * 0.5;
    const double xs[4] = {c - half, c + half, c - half, c + half};
    const double ys[4] = {c - half, c - half, c + half, c + half};
    for (int i = 0; i < 4; ++i) {
        cx[i] = xs[i];
        cy[i] = ys[i];
    }
}
}  // namespace

bool KanizsaGeometry::inside_any_disc(int x, int y) const {
    double cx[4], cy[4];
    disc_centers(*this, cx, cy);
    for (int i = 0; i < 4; ++i)
        if (std::hypot(x + 0.5 - cx[i], y + 0.5 - cy[i]) <= radius()) return true;
    return false;
}

bool KanizsaGeometry::on_disc_outline(int x, int y) const {
    double cx[4], cy[4];
    disc_centers(*this, cx, cy);
    for (int i = 0; i < 4; ++i) {
        const double d = std::hypot(x + 0.5 - cx[i], y + 0.5 - cy[i]);
        if (std::fabs(d - radius()) <= 0.5) return true;
    }
    return false;
}

bool KanizsaGeometry::masked(int x, int y) const {
    return square_contour_distance(x, y) <= band() || inside_any_disc(x, y);
}

SynthSample gen_kanizsa(const KanizsaGeometry& geometry, float inner_u, float inner_v,
                        float background_u, float background_v) {
    geometry.validate();
    const int n = geometry.size;
    SynthSample sample;
    sample.gt = FlowField(n, n);
    sample.sparse = FlowField(n, n);
    sample.mask = MissingMask(n, n, 0);
    sample.edges = EdgeMap(n, n, 0.f);
    sample.id = "kanizsa";
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const std::size_t i = sample.gt.idx(x, y);
            const bool in = geometry.inside_square(x, y);
            sample.gt.u[i] = in ? inner_u : background_u;
            sample.gt.v[i] = in ? inner_v : background_v;
            if (geometry.masked(x, y)) {
                sample.mask.missing[i] = 1;
            } else {
                sample.sparse.u[i] = sample.gt.u[i];
                sample.sparse.v[i] = sample.gt.v[i];
            }
            // only the real disc outlines, never the square contour
            if (geometry.on_disc_outline(x, y)) sample.edges.strength[i] = 1.f;
        }
    }
    return sample;
}

PixelMask kanizsa_band(const KanizsaGeometry& geometry) {
    const int n = geometry.size;
    PixelMask band(std::size_t(n) * n, 0);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            if (geometry.square_contour_distance(x, y) <= geometry.band() &&
                !geometry.inside_any_disc(x, y))
                band[std::size_t(y) * n + x] = 1;
    return band;
}

std::vector<DatasetPaths> write_dataset(const std::vector<SynthSample>& samples,
                                        const std::string& out_dir,
                                        const std::string& manifest_name) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory: " + out_dir);

    std::vector<DatasetPaths> paths;
    for (const auto& s : samples) {
        DatasetPaths p;
        const std::string stem = (fs::path(out_dir) / s.id).string();
        p.gt = stem + "_gt.flo";
        p.sparse = stem + "_in.flo";
        p.mask = stem + "_mask.pgm";
        p.edges = stem + "_edges.pgm";
        write_flo(s.gt, p.gt);
        write_flo(s.sparse, p.sparse);
        write_mask_pgm(s.mask, p.mask);
        write_edge_map_pgm(s.edges, p.edges);
        paths.push_back(std::move(p));
    }
    std::ofstream mf(fs::path(out_dir) / manifest_name);
    if (!mf) throw IoError("cannot write manifest in " + out_dir);
    for (const auto& p : paths)
        mf << fs::path(p.gt).filename().string() << ' ' << fs::path(p.sparse).filename().string()
           << ' ' << fs::path(p.mask).filename().string() << ' '
           << fs::path(p.edges).filename().string() << '\n';
    return paths;
}

std::vector<DatasetPaths> read_manifest(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("cannot open manifest: " + manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    std::vector<DatasetPaths> paths;
    std::string line;
    int lineno = 0;
    while (std::getline(mf, line)) {
        ++lineno;
        std::istringstream ls(line);
        DatasetPaths p;
        if (!(ls >> p.gt >> p.sparse >> p.mask >> p.edges)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            throw IoError("manifest line " + std::to_string(lineno) + ": expected 4 paths");
        }
        auto resolve = [&base](std::string& s) {
            if (!fs::path(s).is_absolute()) s = (base / s).string();
        };
        resolve(p.gt);
        resolve(p.sparse);
        resolve(p.mask);
        resolve(p.edges);
        paths.push_back(std::move(p));
    }
    return paths;
}

}  // namespace iflow
