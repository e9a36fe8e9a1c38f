#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "iflow/model.hpp"
#include "testutil.hpp"

using namespace iflow;

TEST_SUITE_BEGIN("model");

TEST_CASE("init_params is deterministic per seed and seed-sensitive") {
    ModelConfig cfg;
    cfg.num_layers = 3;
    cfg.hidden_channels = 4;
    const ModelParams a = init_params(cfg, 5);
    const ModelParams b = init_params(cfg, 5);
    const ModelParams c = init_params(cfg, 6);
    for (std::size_t i = 0; i < a.tensors.size(); ++i)
        CHECK(a.tensors[i].data == b.tensors[i].data);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.tensors.size() && !any_diff; ++i)
        any_diff = a.tensors[i].data != c.tensors[i].data;
    CHECK(any_diff);
}

TEST_CASE("init_params sample mean is near zero for the default first kernel") {
    ModelConfig cfg;  // 7x7x4x64 first kernel
    const ModelParams p = init_params(cfg, 11);
    const auto& k = p.tensors[0];
    double mean = 0;
    for (auto v : k.data) mean += double(v);
    mean /= double(k.data.size());
    const double bound = std::sqrt(6.0 / (7 * 7 * 4));
    const double sigma_mean = bound / std::sqrt(3.0 * double(k.data.size()));
    CHECK(std::fabs(mean) < 3.0 * sigma_mean);
    // biases are zero
    for (auto v : p.tensors[1].data) CHECK(v == ad::Real(0));
}

TEST_CASE("forward emits num_layers detours of the input extent") {
    std::mt19937_64 rng(101);
    ModelConfig cfg;
    cfg.num_layers = 4;
    cfg.hidden_channels = 5;
    const ModelParams params = init_params(cfg, 3);
    const NetInput in = testutil::random_net_input(6, 9, rng);
    ad::Tape tape;
    ForwardPass pass = forward(tape, params, in);
    REQUIRE(pass.detours.size() == 4);
    for (const auto& d : pass.detours) {
        CHECK(d.shape()[0] == 6);
        CHECK(d.shape()[1] == 9);
        CHECK(d.shape()[2] == 2);
    }
}

TEST_CASE("all-zero parameters produce all-zero detour maps") {
    std::mt19937_64 rng(103);
    ModelConfig cfg;
    cfg.num_layers = 3;
    cfg.hidden_channels = 3;
    ModelParams params = init_params(cfg, 1);
    for (auto& t : params.tensors) std::fill(t.data.begin(), t.data.end(), ad::Real(0));
    const NetInput in = testutil::random_net_input(5, 5, rng);
    ad::Tape tape;
    ForwardPass pass = forward(tape, params, in);
    for (const auto& d : pass.detours)
        for (ad::Real v : d.data()) CHECK(v == ad::Real(0));
}

TEST_CASE("fixed seed and input give bitwise-identical outputs across runs") {
    std::mt19937_64 rng(107);
    ModelConfig cfg;
    cfg.num_layers = 3;
    cfg.hidden_channels = 4;
    const NetInput in = testutil::random_net_input(7, 6, rng);
    const FlowField a = predict(init_params(cfg, 9), in);
    const FlowField b = predict(init_params(cfg, 9), in);
    CHECK(a.u == b.u);
    CHECK(a.v == b.v);
}

TEST_CASE("predict equals the last forward detour and is finite on all-missing input") {
    std::mt19937_64 rng(109);
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden_channels = 3;
    const ModelParams params = init_params(cfg, 2);
    const NetInput in = testutil::random_net_input(4, 5, rng);

    ad::Tape tape;
    ForwardPass pass = forward(tape, params, in);
    const FlowField p = predict(params, in);
    auto last = pass.detours.back().data();
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x) {
            const std::size_t i = (std::size_t(y) * 5 + x) * 2;
            CHECK(p.u[p.idx(x, y)] == float(last[i]));
            CHECK(p.v[p.idx(x, y)] == float(last[i + 1]));
        }

    NetInput missing(4, 5, 32, 40);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x) missing.at(y, x, NetInput::kChanMask) = 1.f;
    const FlowField m = predict(params, missing);
    for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(std::isfinite(m.u[i]));
        CHECK(std::isfinite(m.v[i]));
    }
}

TEST_CASE("detour heads are linear: doubling the kernel doubles the centered output") {
    std::mt19937_64 rng(113);
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden_channels = 3;
    ModelParams params = init_params(cfg, 21);  // zero detour biases
    const NetInput in = testutil::random_net_input(5, 4, rng);

    ModelParams doubled = params;
    const int l = 1;
    for (auto& v : doubled.detour_kernel(l).data) v *= ad::Real(2);

    ad::Tape t1, t2;
    const auto d1 = forward(t1, params, in).detours[l].data();
    const auto d2 = forward(t2, doubled, in).detours[l].data();
    // bias is zero: doubling the kernel doubles the output bitwise
    for (std::size_t i = 0; i < d1.size(); ++i) CHECK(d2[i] == ad::Real(2) * d1[i]);

    // with a nonzero bias the centered outputs double to rounding error
    for (int layer = 0; layer < cfg.num_layers; ++layer)
        for (auto& b : params.detour_bias(layer).data) b = ad::Real(0.25);
    doubled = params;
    for (auto& v : doubled.detour_kernel(l).data) v *= ad::Real(2);
    ad::Tape t3, t4;
    const auto e1 = forward(t3, params, in).detours[l].data();
    const auto e2 = forward(t4, doubled, in).detours[l].data();
    for (std::size_t i = 0; i < e1.size(); ++i)
        CHECK(double(e2[i]) - 0.25 ==
              doctest::Approx(2.0 * (double(e1[i]) - 0.25)).epsilon(1e-5));
}

TEST_CASE("spatial mixing is bounded by the receptive field") {
    // One perturbed pixel can only influence detour l within radius
    // l*(k-1)/2; beyond it outputs are bitwise identical.
    std::mt19937_64 rng(127);
    ModelConfig cfg;
    cfg.num_layers = 3;
    cfg.kernel_size = 3;
    cfg.hidden_channels = 3;
    const ModelParams params = init_params(cfg, 31);
    for (int trial = 0; trial < 10; ++trial) {
        const int gh = 11, gw = 13;
        const NetInput in = testutil::random_net_input(gh, gw, rng);
        NetInput poked = in;
        const int py = int(rng() % std::uint64_t(gh)), px = int(rng() % std::uint64_t(gw));
        poked.at(py, px, NetInput::kChanEdges) =
            poked.at(py, px, NetInput::kChanEdges) > 0.5f ? 0.f : 1.f;

        ad::Tape ta, tb;
        ForwardPass fa = forward(ta, params, in);
        ForwardPass fb = forward(tb, params, poked);
        for (int l = 0; l < cfg.num_layers; ++l) {
            const int radius = (l + 1) * (cfg.kernel_size - 1) / 2;
            auto da = fa.detours[std::size_t(l)].data();
            auto db = fb.detours[std::size_t(l)].data();
            for (int y = 0; y < gh; ++y)
                for (int x = 0; x < gw; ++x) {
                    if (std::abs(y - py) <= radius || std::abs(x - px) <= radius) continue;
                    const std::size_t i = (std::size_t(y) * gw + x) * 2;
                    CHECK(da[i] == db[i]);
                    CHECK(da[i + 1] == db[i + 1]);
                }
        }
    }
}

TEST_CASE("interior translation equivariance on a 128x128 grid") {
    ModelConfig cfg;
    cfg.num_layers = 10;
    cfg.kernel_size = 7;
    cfg.hidden_channels = 8;
    const ModelParams params = init_params(cfg, 77);
    std::mt19937_64 rng(131);
    const int n = 128;
    const NetInput in = testutil::random_net_input(n, n, rng);

    // shift right/down by one cell with zero fill
    NetInput shifted(n, n, n * 8, n * 8);
    for (int y = 1; y < n; ++y)
        for (int x = 1; x < n; ++x)
            for (int c = 0; c < 4; ++c) shifted.at(y, x, c) = in.at(y - 1, x - 1, c);
    for (int i = 0; i < n; ++i) {
        shifted.at(0, i, NetInput::kChanMask) = 1.f;
        shifted.at(i, 0, NetInput::kChanMask) = 1.f;
    }

    const FlowField a = predict(params, in);
    const FlowField b = predict(params, shifted);
    const int band = cfg.num_layers * (cfg.kernel_size - 1) / 2 + 1;
    for (int y = band; y < n - band; ++y)
        for (int x = band; x < n - band; ++x) {
            CHECK(b.u[b.idx(x, y)] == a.u[a.idx(x - 1, y - 1)]);
            CHECK(b.v[b.idx(x, y)] == a.v[a.idx(x - 1, y - 1)]);
        }
}

TEST_CASE("params serialization round trips bitwise") {
    ModelConfig cfg;
    cfg.num_layers = 3;
    cfg.hidden_channels = 5;
    cfg.detour_weights = {0.25f, 0.25f, 1.f};
    const ModelParams p = init_params(cfg, 19);
    std::stringstream buf;
    write_params(buf, p);
    const ModelParams q = read_params(buf);
    CHECK(q.config == p.config);
    REQUIRE(q.tensors.size() == p.tensors.size());
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
        CHECK(q.tensors[i].shape == p.tensors[i].shape);
        CHECK(q.tensors[i].data == p.tensors[i].data);
    }
}

TEST_CASE("params reader rejects bad magic") {
    std::stringstream buf;
    buf << "NOPE garbage";
    CHECK_THROWS_AS(read_params(buf), IoError);
}

TEST_CASE("config validation") {
    ModelConfig bad;
    bad.kernel_size = 4;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ModelConfig{};
    bad.num_layers = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ModelConfig{};
    bad.detour_weights = {0.5f};  // wrong length
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    ModelConfig ok;
    ok.detour_weights = std::vector<float>(10, 0.5f);
    ok.detour_weights.back() = 1.f;
    CHECK_NOTHROW(ok.validate());
}

TEST_SUITE_END();
