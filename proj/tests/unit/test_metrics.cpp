#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "iflow/metrics.hpp"
#include "testutil.hpp"

using namespace iflow;

TEST_SUITE_BEGIN("metrics");

TEST_CASE("mean_epe examples") {
    std::mt19937_64 rng(191);
    const FlowField f = testutil::random_flow(4, 3, rng, -5, 5);
    CHECK(mean_epe(f, f) == 0.0);  // exact, no smoothing in metric mode

    FlowField pred(2, 2), gt(2, 2);
    pred.u[3] = 3.f;
    pred.v[3] = 4.f;
    CHECK(mean_epe(pred, gt) == doctest::Approx(1.25).epsilon(1e-12));

    PixelMask region(4, 0);
    region[3] = 1;
    CHECK(mean_epe(pred, gt, &region) == doctest::Approx(5.0).epsilon(1e-12));

    PixelMask empty(4, 0);
    CHECK_THROWS_AS(mean_epe(pred, gt, &empty), std::invalid_argument);
    CHECK_THROWS_AS(mean_epe(pred, FlowField(3, 3)), std::invalid_argument);
}

TEST_CASE("percent_out: strict threshold") {
    FlowField pred(3, 1), gt(3, 1);
    pred.u = {2.f, 4.f, 3.1f};
    CHECK(percent_out(pred, gt) == doctest::Approx(200.0 / 3.0).epsilon(1e-12));

    FlowField exact(1, 1), zero(1, 1);
    exact.u[0] = 3.f;
    CHECK(percent_out(exact, zero) == 0.0);  // EPE exactly 3 is not an outlier

    CHECK(percent_out(gt, gt) == 0.0);
}

TEST_CASE("percent_out is invariant under pixel permutation") {
    std::mt19937_64 rng(193);
    for (int trial = 0; trial < 50; ++trial) {
        const int w = 3 + int(rng() % 6), h = 3 + int(rng() % 6);
        const FlowField pred = testutil::random_flow(w, h, rng, -6, 6);
        const FlowField gt = testutil::random_flow(w, h, rng, -6, 6);
        const double base = percent_out(pred, gt);

        std::vector<std::size_t> perm(pred.size());
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
        FlowField pp(w, h), pg(w, h);
        for (std::size_t i = 0; i < perm.size(); ++i) {
            pp.u[i] = pred.u[perm[i]];
            pp.v[i] = pred.v[perm[i]];
            pg.u[i] = gt.u[perm[i]];
            pg.v[i] = gt.v[perm[i]];
        }
        CHECK(percent_out(pp, pg) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("improvement index examples and properties") {
    CHECK(improvement_index({3}, {1})[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(improvement_index({2}, {2})[0] == 0.0);
    CHECK(improvement_index({1}, {3})[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(improvement_index({0}, {0})[0] == 0.0);  // 0/0 rule

    std::mt19937_64 rng(197);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(20), b(20);
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = testutil::urand(rng, 0, 10);
            b[i] = testutil::urand(rng, 0, 10);
        }
        const auto ab = improvement_index(a, b);
        const auto ba = improvement_index(b, a);
        for (std::size_t i = 0; i < ab.size(); ++i) {
            CHECK(ab[i] == -ba[i]);  // antisymmetry, exact
            CHECK(ab[i] >= -1.0);
            CHECK(ab[i] <= 1.0);
        }
    }
}

TEST_CASE("pixel groups follow the caption rules") {
    const int w = 3, h = 1;
    FlowField input(w, h), gt(w, h);
    MissingMask mask(w, h, 0);
    MissingMask occ(w, h, 0);
    // pixel 0: match present with error (0,4) -> noisy
    input.v[0] = 4.f;
    // pixel 1: missing, not occluded -> missing group
    mask.missing[1] = 1;
    // pixel 2: missing and occluded -> occluded only
    mask.missing[2] = 1;
    occ.missing[2] = 1;

    const PixelGroups g = pixel_groups(input, mask, gt, &occ);
    CHECK(g.noisy[0] == 1);
    CHECK(g.missing[0] == 0);
    CHECK(g.missing[1] == 1);
    CHECK(g.occluded[1] == 0);
    CHECK(g.missing[2] == 0);
    CHECK(g.occluded[2] == 1);

    // disjointness of missing and occluded by construction
    std::mt19937_64 rng(199);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 6;
        FlowField in2 = testutil::random_flow(n, n, rng, -6, 6);
        const FlowField gt2 = testutil::random_flow(n, n, rng, -6, 6);
        MissingMask m2(n, n, 0), o2(n, n, 0);
        for (auto& b : m2.missing) b = (rng() & 1) ? 1 : 0;
        for (auto& b : o2.missing) b = (rng() % 3) == 0 ? 1 : 0;
        const PixelGroups g2 = pixel_groups(in2, m2, gt2, &o2);
        for (std::size_t i = 0; i < g2.missing.size(); ++i)
            CHECK((g2.missing[i] & g2.occluded[i]) == 0);
    }

    // no occlusion mask: occluded group empty
    const PixelGroups g3 = pixel_groups(input, mask, gt, nullptr);
    CHECK(std::count(g3.occluded.begin(), g3.occluded.end(), std::uint8_t(1)) == 0);
}

TEST_CASE("exact distance transform matches brute force") {
    std::mt19937_64 rng(211);
    for (int trial = 0; trial < 25; ++trial) {
        const int w = 2 + int(rng() % 14), h = 2 + int(rng() % 14);
        EdgeMap e(w, h, 0.f);
        for (auto& s : e.strength) s = (rng() % 5) == 0 ? 1.f : 0.f;
        const auto fast = distance_from_edges(e);
        const auto ref = testutil::naive_distance_transform(e);
        for (std::size_t i = 0; i < fast.size(); ++i) {
            if (std::isinf(ref[i]))
                CHECK(std::isinf(fast[i]));
            else
                CHECK(fast[i] == doctest::Approx(ref[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("distance profile: geometry examples") {
    // all pixels are edges: one bin at distance zero
    EdgeMap all(4, 4, 1.f);
    std::vector<double> ii(16, 0.2);
    PixelMask missing(16, 0);
    auto bins = distance_from_edges_profile(ii, all, missing);
    REQUIRE(bins.size() == 1);
    CHECK(bins[0].bin == 0);
    CHECK(bins[0].mean_ii_non_missing == doctest::Approx(0.2).epsilon(1e-12));

    // single edge column in a 1-row image: distances 0,1,2,...
    const int w = 6;
    EdgeMap col(w, 1, 0.f);
    col.strength[0] = 1.f;
    std::vector<double> ii2(w, 0.2);
    PixelMask none(std::size_t(w), 0);
    bins = distance_from_edges_profile(ii2, col, none);
    REQUIRE(bins.size() == std::size_t(w));
    for (int b = 0; b < w; ++b) {
        CHECK(bins[std::size_t(b)].bin == b);
        CHECK(bins[std::size_t(b)].count_non_missing == 1);
        CHECK(bins[std::size_t(b)].mean_ii_non_missing == doctest::Approx(0.2).epsilon(1e-12));
    }

    // no edges at all: one unbounded bin
    EdgeMap bare(3, 3, 0.f);
    std::vector<double> ii3(9, -0.1);
    PixelMask m3(9, 1);
    bins = distance_from_edges_profile(ii3, bare, m3);
    REQUIRE(bins.size() == 1);
    CHECK(bins[0].bin == -1);
    CHECK(bins[0].count_missing == 9);
    CHECK(bins[0].mean_ii_missing == doctest::Approx(-0.1).epsilon(1e-12));
}

TEST_CASE("mean_epe over a partition equals the size-weighted mean of parts") {
    std::mt19937_64 rng(223);
    for (int trial = 0; trial < 50; ++trial) {
        const int w = 4 + int(rng() % 8), h = 4 + int(rng() % 8);
        const FlowField pred = testutil::random_flow(w, h, rng, -5, 5);
        const FlowField gt = testutil::random_flow(w, h, rng, -5, 5);
        PixelMask part_a(pred.size(), 0), part_b(pred.size(), 0);
        std::int64_t na = 0, nb = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (rng() & 1) {
                part_a[i] = 1;
                ++na;
            } else {
                part_b[i] = 1;
                ++nb;
            }
        }
        if (na == 0 || nb == 0) continue;
        const double whole = mean_epe(pred, gt);
        const double weighted = (mean_epe(pred, gt, &part_a) * double(na) +
                                 mean_epe(pred, gt, &part_b) * double(nb)) /
                                double(na + nb);
        CHECK(std::fabs(whole - weighted) < 1e-6);
    }
}

TEST_CASE("aggregate row is the pixel-weighted mean of per-image rows") {
    std::mt19937_64 rng(227);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<EvalRow> rows;
        double manual_sum = 0;
        std::int64_t manual_px = 0;
        const int n = 2 + int(rng() % 5);
        for (int i = 0; i < n; ++i) {
            EvalRow r;
            r.name = "img" + std::to_string(i);
            r.pixels = 10 + std::int64_t(rng() % 90);
            r.epe = testutil::urand(rng, 0, 8);
            manual_sum += r.epe * double(r.pixels);
            manual_px += r.pixels;
            rows.push_back(r);
        }
        const EvalReport rep = aggregate_rows(rows);
        CHECK(std::fabs(rep.aggregate.epe - manual_sum / double(manual_px)) < 1e-6);
        CHECK(rep.aggregate.pixels == manual_px);
    }
}

TEST_CASE("eval report renders CSV with one row per image plus aggregate") {
    EvalRow r;
    r.name = "a";
    r.pixels = 4;
    r.epe = 1.5;
    r.pct_out = 25.0;
    const EvalReport rep = aggregate_rows({r});
    const std::string csv = rep.to_csv();
    CHECK(csv.find("name,pixels,epe,pct_out") == 0);
    CHECK(csv.find("\na,4,") != std::string::npos);
    CHECK(csv.find("\naggregate,4,") != std::string::npos);
}

TEST_SUITE_END();
