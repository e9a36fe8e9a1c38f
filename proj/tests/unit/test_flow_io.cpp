#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "iflow/flow_io.hpp"
#include "testutil.hpp"

using namespace iflow;

TEST_SUITE_BEGIN("flow_io");

TEST_CASE(".flo round trip is bit-exact and files are deterministic") {
    testutil::TempDir dir("flo");
    std::mt19937_64 rng(41);
    const FlowField f = testutil::random_flow(4, 3, rng, -30, 30);
    const std::string p1 = dir.file("a.flo"), p2 = dir.file("b.flo");
    write_flo(f, p1);
    const FlowField g = read_flo(p1);
    CHECK(g.width == f.width);
    CHECK(g.height == f.height);
    CHECK(g.u == f.u);
    CHECK(g.v == f.v);

    write_flo(g, p2);
    std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
    const std::string ba((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    const std::string bb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);
}

TEST_CASE(".flo reader cross-checked against hand-written reference bytes") {
    // 2x1 field, u/v = (1.5, -2.0), (0.25, 8.0), bytes written out from the
    // published layout: magic float, int32 w, int32 h, interleaved floats.
    const unsigned char bytes[] = {
        0x50, 0x49, 0x45, 0x48,              // 202021.25f ("PIEH")
        0x02, 0x00, 0x00, 0x00,              // width 2
        0x01, 0x00, 0x00, 0x00,              // height 1
        0x00, 0x00, 0xc0, 0x3f,              // 1.5f
        0x00, 0x00, 0x00, 0xc0,              // -2.0f
        0x00, 0x00, 0x80, 0x3e,              // 0.25f
        0x00, 0x00, 0x00, 0x41,              // 8.0f
    };
    testutil::TempDir dir("floref");
    const std::string path = dir.file("ref.flo");
    std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes), sizeof bytes);
    const FlowField f = read_flo(path);
    CHECK(f.width == 2);
    CHECK(f.height == 1);
    CHECK(f.u[0] == 1.5f);
    CHECK(f.v[0] == -2.0f);
    CHECK(f.u[1] == 0.25f);
    CHECK(f.v[1] == 8.0f);
}

TEST_CASE(".flo error surfaces: bad magic, truncation, nonpositive dims") {
    testutil::TempDir dir("floerr");
    const std::string bad = dir.file("bad.flo");
    {
        std::ofstream os(bad, std::ios::binary);
        const float wrong = 123.f;
        os.write(reinterpret_cast<const char*>(&wrong), 4);
        const std::int32_t wh[2] = {2, 2};
        os.write(reinterpret_cast<const char*>(wh), 8);
    }
    CHECK_THROWS_AS(read_flo(bad), IoError);

    const std::string trunc = dir.file("trunc.flo");
    {
        std::mt19937_64 rng(1);
        write_flo(testutil::random_flow(4, 4, rng), trunc);
        std::filesystem::resize_file(trunc, 20);
    }
    CHECK_THROWS_AS(read_flo(trunc), IoError);

    const std::string neg = dir.file("neg.flo");
    {
        std::ofstream os(neg, std::ios::binary);
        const float magic = 202021.25f;
        os.write(reinterpret_cast<const char*>(&magic), 4);
        const std::int32_t wh[2] = {-1, 3};
        os.write(reinterpret_cast<const char*>(wh), 8);
    }
    CHECK_THROWS_AS(read_flo(neg), IoError);
    CHECK_THROWS_AS(read_flo(dir.file("missing.flo")), IoError);
}

TEST_CASE("parse_matches basics") {
    std::istringstream one("10 12 14 12\n");
    const MatchList m1 = parse_matches(one);
    REQUIRE(m1.size() == 1);
    CHECK(m1[0].x1 == 10);
    CHECK(m1[0].y1 == 12);
    CHECK(m1[0].x2 == 14);
    CHECK(m1[0].y2 == 12);

    std::istringstream empty("");
    CHECK(parse_matches(empty).empty());

    std::istringstream scored("10 12 14 12 0.93\n");
    const MatchList m2 = parse_matches(scored);
    REQUIRE(m2.size() == 1);
    CHECK(m2[0].x2 == 14);

    std::istringstream short_line("1 2 3\n");
    CHECK_THROWS_AS(parse_matches(short_line), IoError);
    std::istringstream garbage("1 2 x 4\n");
    CHECK_THROWS_AS(parse_matches(garbage), IoError);
}

TEST_CASE("parse_matches keeps line order and rounds to nearest pixel") {
    std::mt19937_64 rng(43);
    for (int trial = 0; trial < 50; ++trial) {
        std::ostringstream text;
        std::vector<std::array<int, 4>> expect;
        const int n = 1 + int(rng() % 20);
        for (int i = 0; i < n; ++i) {
            const double x1 = testutil::urand(rng, 0, 40), y1 = testutil::urand(rng, 0, 40);
            const double x2 = testutil::urand(rng, 0, 40), y2 = testutil::urand(rng, 0, 40);
            text << x1 << ' ' << y1 << ' ' << x2 << ' ' << y2 << '\n';
            expect.push_back({int(std::lround(x1)), int(std::lround(y1)), int(std::lround(x2)),
                              int(std::lround(y2))});
        }
        std::istringstream is(text.str());
        const MatchList got = parse_matches(is);
        REQUIRE(got.size() == expect.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].x1 == expect[i][0]);
            CHECK(got[i].y1 == expect[i][1]);
            CHECK(got[i].x2 == expect[i][2]);
            CHECK(got[i].y2 == expect[i][3]);
        }
    }
}

TEST_CASE("edge maps: PGM normalization and raw round trip") {
    testutil::TempDir dir("edges");
    EdgeMap e(3, 2);
    e.strength = {0.f, 1.f, 0.25f, 0.5f, 0.75f, 1.f};
    const std::string pgm = dir.file("e.pgm");
    write_edge_map_pgm(e, pgm);
    const EdgeMap back = read_edge_map(pgm);
    CHECK(back.width == 3);
    CHECK(back.height == 2);
    CHECK(back.strength[0] == 0.f);
    CHECK(back.strength[1] == 1.f);  // 255 -> 1.0
    for (std::size_t i = 0; i < e.strength.size(); ++i)
        CHECK(double(back.strength[i]) == doctest::Approx(double(e.strength[i])).epsilon(0.01));

    // raw float form preserves values exactly
    std::mt19937_64 rng(47);
    EdgeMap noisy(5, 4);
    for (auto& s : noisy.strength) s = float(testutil::urand(rng, 0, 1));
    const std::string raw = dir.file("e.edgf");
    write_edge_map_raw(noisy, raw);
    const EdgeMap raw_back = read_edge_map(raw);
    CHECK(raw_back.strength == noisy.strength);

    // all-zero image -> all-zero map
    EdgeMap zero(4, 4, 0.f);
    write_edge_map_pgm(zero, pgm);
    const EdgeMap zb = read_edge_map(pgm);
    for (float s : zb.strength) CHECK(s == 0.f);
}

TEST_CASE("multi-channel image is rejected for single-channel readers") {
    testutil::TempDir dir("p6");
    const std::string path = dir.file("rgb.ppm");
    Image img(2, 2);
    write_ppm(img, path);
    CHECK_THROWS_AS(read_edge_map(path), IoError);
    CHECK_THROWS_AS(read_mask_pgm(path), IoError);
}

TEST_CASE("mask PGM round trip") {
    testutil::TempDir dir("mask");
    MissingMask m(4, 3);
    std::mt19937_64 rng(53);
    for (auto& b : m.missing) b = (rng() & 1) ? 1 : 0;
    const std::string path = dir.file("m.pgm");
    write_mask_pgm(m, path);
    const MissingMask back = read_mask_pgm(path);
    CHECK(back.missing == m.missing);
}

TEST_CASE("flow_to_color: white center, red at pure +u, ratio invariance") {
    FlowField f(3, 1);
    f.u = {0.f, 5.f, -5.f};
    f.v = {0.f, 0.f, 0.f};
    const Image img = flow_to_color(f);  // auto max = 5
    CHECK(img.rgb[0] == 255);
    CHECK(img.rgb[1] == 255);
    CHECK(img.rgb[2] == 255);
    // pure +u at max magnitude: the wheel's angle-zero entry at full saturation
    CHECK(img.rgb[3] == 255);
    CHECK(img.rgb[4] == 0);
    CHECK(img.rgb[5] == 0);

    FlowField scaled(3, 1);
    for (int i = 0; i < 3; ++i) {
        scaled.u[std::size_t(i)] = f.u[std::size_t(i)] * 7.f;
        scaled.v[std::size_t(i)] = f.v[std::size_t(i)] * 7.f;
    }
    const Image img2 = flow_to_color(scaled, 35.f);
    const Image img1 = flow_to_color(f, 5.f);
    CHECK(img1.rgb == img2.rgb);
}

TEST_CASE("flow_to_color matches the independent color-wheel reference") {
    std::mt19937_64 rng(59);
    for (int trial = 0; trial < 50; ++trial) {
        const FlowField f = testutil::random_flow(6, 5, rng, -10, 10);
        const float max_mag = 12.f;
        const Image img = flow_to_color(f, max_mag);
        for (std::size_t i = 0; i < f.size(); ++i) {
            int rgb[3];
            testutil::reference_flow_color(f.u[i], f.v[i], max_mag, rgb);
            for (int c = 0; c < 3; ++c)
                CHECK(std::abs(int(img.rgb[i * 3 + std::size_t(c)]) - rgb[c]) <= 1);
        }
    }
}

TEST_SUITE_END();
