#include "iflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace iflow {

namespace {

void require_same_dims(const FlowField& a, const FlowField& b, const char* op) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument(std::string(op) + ": dimension mismatch");
}

}  // namespace

std::vector<double> epe_image(const FlowField& pred, const FlowField& gt) {
    require_same_dims(pred, gt, "epe_image");
    std::vector<double> e(pred.size());
    for (std::size_t i = 0; i < e.size(); ++i)
        e[i] = std::hypot(double(pred.u[i]) - double(gt.u[i]), double(pred.v[i]) - double(gt.v[i]));
    return e;
}

double mean_epe(const FlowField& pred, const FlowField& gt, const PixelMask* region) {
    const auto e = epe_image(pred, gt);
    double acc = 0.0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        if (region && !(*region)[i]) continue;
        acc += e[i];
        n += 1;
    }
    if (n == 0) throw std::invalid_argument("mean_epe: empty region");
    return acc / double(n);
}

double percent_out(const FlowField& pred, const FlowField& gt, double tau,
                   const PixelMask* region) {
    const auto e = epe_image(pred, gt);
    std::int64_t out = 0, n = 0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        if (region && !(*region)[i]) continue;
        n += 1;
        if (e[i] > tau) out += 1;
    }
    if (n == 0) throw std::invalid_argument("percent_out: empty region");
    return 100.0 * double(out) / double(n);
}

std::vector<double> improvement_index(const std::vector<double>& epe_a,
                                      const std::vector<double>& epe_b) {
    if (epe_a.size() != epe_b.size())
        throw std::invalid_argument("improvement_index: size mismatch");
    std::vector<double> ii(epe_a.size());
    for (std::size_t i = 0; i < ii.size(); ++i) {
        const double denom = epe_a[i] + epe_b[i];
        ii[i] = denom > 0.0 ? (epe_a[i] - epe_b[i]) / denom : 0.0;
    }
    return ii;
}

PixelGroups pixel_groups(const FlowField& input_flow, const MissingMask& input_mask,
                         const FlowField& gt, const MissingMask* occlusion) {
    require_same_dims(input_flow, gt, "pixel_groups");
    if (input_mask.width != gt.width || input_mask.height != gt.height)
        throw std::invalid_argument("pixel_groups: mask dimension mismatch");
    if (occlusion && (occlusion->width != gt.width || occlusion->height != gt.height))
        throw std::invalid_argument("pixel_groups: occlusion dimension mismatch");

    const auto n = gt.size();
    PixelGroups g{PixelMask(n, 0), PixelMask(n, 0), PixelMask(n, 0)};
    const auto input_err = epe_image(input_flow, gt);
    for (std::size_t i = 0; i < n; ++i) {
        const bool occ = occlusion && occlusion->missing[i];
        if (occ) g.occluded[i] = 1;
        if (!input_mask.missing[i] && input_err[i] > 3.0) g.noisy[i] = 1;
        if (input_mask.missing[i] && !occ) g.missing[i] = 1;
    }
    return g;
}

namespace {

// Felzenszwalb & Huttenlocher lower-envelope pass over one line of squared
// distances; exact for squared Euclidean. Infinite entries never become
// envelope parabolas, so fully-empty lines stay infinite.
void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
    const int n = static_cast<int>(f.size());
    const double inf = std::numeric_limits<double>::infinity();
    d.assign(f.size(), inf);
    std::vector<int> v(f.size(), 0);
    std::vector<double> z(f.size() + 1, 0.0);
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (std::isinf(f[std::size_t(q)])) continue;
        double s = 0.0;
        while (k >= 0) {
            const int p = v[std::size_t(k)];
            s = ((f[std::size_t(q)] + double(q) * q) - (f[std::size_t(p)] + double(p) * p)) /
                (2.0 * q - 2.0 * p);
            if (s > z[std::size_t(k)]) break;
            --k;
        }
        ++k;
        v[std::size_t(k)] = q;
        z[std::size_t(k)] = k == 0 ? -inf : s;
        z[std::size_t(k) + 1] = inf;
    }
    if (k < 0) return;  // no finite sites on this line
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[std::size_t(k) + 1] < double(q)) ++k;
        const double dq = double(q) - v[std::size_t(k)];
        d[std::size_t(q)] = dq * dq + f[std::size_t(v[std::size_t(k)])];
    }
}

}  // namespace

std::vector<double> distance_from_edges(const EdgeMap& edges) {
    const int w = edges.width, h = edges.height;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> sq(edges.strength.size());
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = edges.strength[i] >= 0.5f ? 0.0 : inf;

    std::vector<double> line, out;
    // columns, then rows
    line.resize(static_cast<std::size_t>(h));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) line[std::size_t(y)] = sq[edges.idx(x, y)];
        edt_1d(line, out);
        for (int y = 0; y < h; ++y) sq[edges.idx(x, y)] = out[std::size_t(y)];
    }
    line.resize(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) line[std::size_t(x)] = sq[edges.idx(x, y)];
        edt_1d(line, out);
        for (int x = 0; x < w; ++x) sq[edges.idx(x, y)] = out[std::size_t(x)];
    }
    for (auto& d : sq) d = std::isinf(d) ? d : std::sqrt(d);
    return sq;
}

std::vector<DistanceProfileBin> distance_from_edges_profile(const std::vector<double>& ii_map,
                                                            const EdgeMap& edges,
                                                            const PixelMask& missing) {
    if (ii_map.size() != edges.strength.size() || missing.size() != ii_map.size())
        throw std::invalid_argument("distance_from_edges_profile: size mismatch");
    const auto dist = distance_from_edges(edges);

    struct Acc {
        double sum_m = 0.0, sum_n = 0.0;
        std::int64_t cnt_m = 0, cnt_n = 0;
    };
    std::vector<Acc> bins;
    Acc unbounded;
    bool any_edge = false;
    for (double d : dist)
        if (!std::isinf(d)) {
            any_edge = true;
            break;
        }

    for (std::size_t i = 0; i < ii_map.size(); ++i) {
        Acc* a;
        if (!any_edge) {
            a = &unbounded;
        } else {
            const auto b = static_cast<std::size_t>(std::floor(dist[i]));
            if (bins.size() <= b) bins.resize(b + 1);
            a = &bins[b];
        }
        if (missing[i]) {
            a->sum_m += ii_map[i];
            a->cnt_m += 1;
        } else {
            a->sum_n += ii_map[i];
            a->cnt_n += 1;
        }
    }

    std::vector<DistanceProfileBin> result;
    auto emit = [&result](int bin, const Acc& a) {
        DistanceProfileBin b;
        b.bin = bin;
        b.count_missing = a.cnt_m;
        b.count_non_missing = a.cnt_n;
        b.mean_ii_missing = a.cnt_m ? a.sum_m / double(a.cnt_m) : 0.0;
        b.mean_ii_non_missing = a.cnt_n ? a.sum_n / double(a.cnt_n) : 0.0;
        result.push_back(b);
    };
    if (!any_edge) {
        emit(-1, unbounded);
        return result;
    }
    for (std::size_t b = 0; b < bins.size(); ++b) emit(static_cast<int>(b), bins[b]);
    return result;
}

namespace {

std::string cell(double value, std::int64_t count) {
    if (count == 0) return "";
    std::ostringstream os;
    os.precision(9);
    os << value;
    return os.str();
}

void append_row(std::ostringstream& os, const EvalRow& r, bool with_ii) {
    os << r.name << ',' << r.pixels << ',';
    os.precision(9);
    os << r.epe << ',' << r.pct_out << ',' << cell(r.epe_noisy, r.noisy_pixels) << ','
       << cell(r.epe_occluded, r.occluded_pixels) << ',' << cell(r.epe_missing, r.missing_pixels)
       << ',' << cell(r.pct_out_noc, r.noc_pixels);
    if (with_ii) {
        os << ',' << (r.ii_missing ? cell(*r.ii_missing, 1) : std::string())
           << ',' << (r.ii_non_missing ? cell(*r.ii_non_missing, 1) : std::string());
    }
    os << '\n';
}

}  // namespace

EvalReport aggregate_rows(std::vector<EvalRow> rows) {
    EvalReport report;
    EvalRow agg;
    agg.name = "aggregate";
    double epe_sum = 0, out_sum = 0, noisy_sum = 0, occ_sum = 0, miss_sum = 0, out_noc_sum = 0;
    double ii_m_sum = 0, ii_n_sum = 0;
    std::int64_t ii_m_cnt = 0, ii_n_cnt = 0;
    for (const auto& r : rows) {
        agg.pixels += r.pixels;
        epe_sum += r.epe * double(r.pixels);
        out_sum += r.pct_out * double(r.pixels);
        noisy_sum += r.epe_noisy * double(r.noisy_pixels);
        agg.noisy_pixels += r.noisy_pixels;
        occ_sum += r.epe_occluded * double(r.occluded_pixels);
        agg.occluded_pixels += r.occluded_pixels;
        miss_sum += r.epe_missing * double(r.missing_pixels);
        agg.missing_pixels += r.missing_pixels;
        out_noc_sum += r.pct_out_noc * double(r.noc_pixels);
        agg.noc_pixels += r.noc_pixels;
        if (r.ii_missing) {
            ii_m_sum += *r.ii_missing * double(r.missing_pixels);
            ii_m_cnt += r.missing_pixels;
        }
        if (r.ii_non_missing) {
            const std::int64_t nm = r.pixels - r.missing_pixels;
            ii_n_sum += *r.ii_non_missing * double(nm);
            ii_n_cnt += nm;
        }
    }
    if (agg.pixels > 0) {
        agg.epe = epe_sum / double(agg.pixels);
        agg.pct_out = out_sum / double(agg.pixels);
    }
    if (agg.noisy_pixels) agg.epe_noisy = noisy_sum / double(agg.noisy_pixels);
    if (agg.occluded_pixels) agg.epe_occluded = occ_sum / double(agg.occluded_pixels);
    if (agg.missing_pixels) agg.epe_missing = miss_sum / double(agg.missing_pixels);
    if (agg.noc_pixels) agg.pct_out_noc = out_noc_sum / double(agg.noc_pixels);
    if (ii_m_cnt) agg.ii_missing = ii_m_sum / double(ii_m_cnt);
    if (ii_n_cnt) agg.ii_non_missing = ii_n_sum / double(ii_n_cnt);
    report.per_image = std::move(rows);
    report.aggregate = agg;
    return report;
}

std::string EvalReport::to_csv() const {
    bool with_ii = aggregate.ii_missing.has_value() || aggregate.ii_non_missing.has_value();
    for (const auto& r : per_image)
        with_ii = with_ii || r.ii_missing.has_value() || r.ii_non_missing.has_value();
    std::ostringstream os;
    os << "name,pixels,epe,pct_out,epe_noisy,epe_occluded,epe_missing,pct_out_noc";
    if (with_ii) os << ",ii_missing,ii_non_missing";
    os << '\n';
    for (const auto& r : per_image) append_row(os, r, with_ii);
    append_row(os, aggregate, with_ii);
    return os.str();
}

}  // namespace iflow
