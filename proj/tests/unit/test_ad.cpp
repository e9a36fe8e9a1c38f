#include <doctest.h>

#include <cmath>
#include <random>

#include "iflow/ad.hpp"
#include "iflow/gradcheck.hpp"
#include "testutil.hpp"

using namespace iflow;
using ad::Real;
using ad::TensorData;
using ad::Var;

TEST_SUITE_BEGIN("ad");

TEST_CASE("conv2d identity kernel is the identity map") {
    ad::Tape tape;
    std::mt19937_64 rng(7);
    const auto in = testutil::random_tensor({3, 3, 1}, rng);
    TensorData kernel({7, 7, 1, 1});
    kernel.data[3 * 7 + 3] = Real(1);  // center tap
    TensorData bias({1});
    Var out = ad::conv2d(tape.leaf(in), tape.leaf(kernel), tape.leaf(bias));
    for (std::size_t i = 0; i < in.data.size(); ++i) CHECK(out.data()[i] == in.data[i]);
}

TEST_CASE("conv2d single pixel under zero padding") {
    ad::Tape tape;
    TensorData in({1, 1, 1});
    in.data[0] = Real(2);
    TensorData kernel({7, 7, 1, 1});
    for (auto& v : kernel.data) v = Real(1);
    TensorData bias({1});
    bias.data[0] = Real(0.5);
    Var out = ad::conv2d(tape.leaf(in), tape.leaf(kernel), tape.leaf(bias));
    CHECK(double(out.data()[0]) == doctest::Approx(2.5).epsilon(1e-7));
}

TEST_CASE("conv2d matches the naive quadruple-loop oracle") {
    std::mt19937_64 rng(11);
    const int h = 5, w = 6, cin = 3, cout = 2, k = 7;
    const auto in = testutil::random_tensor({h, w, cin}, rng);
    const auto kernel = testutil::random_tensor({k, k, cin, cout}, rng);
    const auto bias = testutil::random_tensor({cout}, rng);

    ad::Tape tape;
    Var out = ad::conv2d(tape.leaf(in), tape.leaf(kernel), tape.leaf(bias));

    const std::vector<double> di(in.data.begin(), in.data.end());
    const std::vector<double> dk(kernel.data.begin(), kernel.data.end());
    const std::vector<double> db(bias.data.begin(), bias.data.end());
    const auto ref = testutil::naive_conv2d(di, h, w, cin, dk, k, cout, db);
    for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK(std::fabs(double(out.data()[i]) - ref[i]) < 1e-5);
}

TEST_CASE("conv2d error surfaces") {
    ad::Tape tape;
    std::mt19937_64 rng(3);
    Var in = tape.leaf(testutil::random_tensor({4, 4, 3}, rng));
    Var bias2 = tape.leaf(TensorData({2}));
    CHECK_THROWS_AS(ad::conv2d(in, tape.leaf(testutil::random_tensor({3, 3, 2, 2}, rng)), bias2),
                    std::invalid_argument);  // channel mismatch
    CHECK_THROWS_AS(ad::conv2d(in, tape.leaf(testutil::random_tensor({4, 4, 3, 2}, rng)), bias2),
                    std::invalid_argument);  // even kernel
    TensorData bad({4, 4, 3});
    bad.data[5] = std::numeric_limits<Real>::quiet_NaN();
    CHECK_THROWS_AS(
        ad::conv2d(tape.leaf(bad), tape.leaf(testutil::random_tensor({3, 3, 3, 2}, rng)), bias2),
        NumericError);
}

TEST_CASE("elu fixed points and closed form") {
    ad::Tape tape;
    TensorData x({3});
    x.data = {Real(0), Real(2), Real(-1)};
    Var y = ad::elu(tape.leaf(x));
    CHECK(y.data()[0] == Real(0));
    CHECK(y.data()[1] == Real(2));
    CHECK(double(y.data()[2]) == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-6));
}

TEST_CASE("elu is continuous at zero with derivative one on both sides") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 64; ++i) {
        const double d = testutil::urand(rng, 1e-5, 1e-3);
        ad::Tape tape;
        TensorData x({2});
        x.data = {Real(d), Real(-d)};
        Var leaf = tape.leaf(x);
        Var y = ad::elu(leaf);
        CHECK(std::fabs(double(y.data()[0]) - d) < 1e-5);
        CHECK(std::fabs(double(y.data()[1]) + d) < 1e-5 + d * d);
        tape.backward(ad::sum(y));
        CHECK(double(leaf.grad()[0]) == doctest::Approx(1.0).epsilon(1e-4));
        CHECK(double(leaf.grad()[1]) == doctest::Approx(1.0).epsilon(2e-3));
    }
}

TEST_CASE("elementwise examples") {
    ad::Tape tape;
    TensorData ones({2, 3});
    for (auto& v : ones.data) v = Real(1);
    CHECK(ad::sum(tape.leaf(ones)).scalar() == Real(6));

    // abs backward at x = -2 with upstream gradient 1 -> -1; at 0 -> 0
    TensorData x({2});
    x.data = {Real(-2), Real(0)};
    Var leaf = tape.leaf(x);
    tape.backward(ad::sum(ad::abs(leaf)));
    CHECK(leaf.grad()[0] == Real(-1));
    CHECK(leaf.grad()[1] == Real(0));

    // sqrt(x + eps) at x = 0: value sqrt(eps), finite gradient
    ad::Tape tape2;
    Var zero = tape2.leaf({1});
    Var root = ad::sqrt_eps(zero);
    CHECK(double(root.scalar()) == doctest::Approx(std::sqrt(1e-9)).epsilon(1e-6));
    tape2.backward(root);
    CHECK(std::isfinite(double(zero.grad()[0])));
}

TEST_CASE("shape mismatch is rejected") {
    ad::Tape tape;
    std::mt19937_64 rng(9);
    Var a = tape.leaf(testutil::random_tensor({2, 3}, rng));
    Var b = tape.leaf(testutil::random_tensor({3, 2}, rng));
    CHECK_THROWS_AS(ad::add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(ad::sub(a, b), std::invalid_argument);
    CHECK_THROWS_AS(ad::mul(a, b), std::invalid_argument);
}

TEST_CASE("backward: sum seeds ones; unreachable parameter keeps zero grad") {
    ad::Tape tape;
    std::mt19937_64 rng(13);
    Var x = tape.leaf(testutil::random_tensor({3, 4}, rng));
    Var unused = tape.leaf(testutil::random_tensor({2, 2}, rng));
    tape.backward(ad::sum(x));
    for (Real g : x.grad()) CHECK(g == Real(1));
    for (Real g : unused.grad()) CHECK(g == Real(0));
}

TEST_CASE("backward requires a scalar loss") {
    ad::Tape tape;
    std::mt19937_64 rng(13);
    Var x = tape.leaf(testutil::random_tensor({3, 4}, rng));
    CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("backward accumulates through fan-out") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        ad::Tape tape;
        Var x = tape.leaf(testutil::random_tensor({4, 3}, rng));
        // x feeds two consumers; d(sum(x*x) + 3*sum(x))/dx = 2x + 3
        Var loss = ad::add(ad::sum(ad::mul(x, x)), ad::scale(ad::sum(x), Real(3)));
        tape.backward(loss);
        for (std::size_t i = 0; i < std::size_t(x.size()); ++i)
            CHECK(double(x.grad()[i]) ==
                  doctest::Approx(2.0 * double(x.data()[i]) + 3.0).epsilon(1e-5));
    }
}

TEST_CASE("adam first step magnitude and zero-gradient behavior") {
    TensorData p({1});
    p.data[0] = Real(1);
    ad::AdamState st;
    st.lr = 5e-5;
    std::vector<Real> g{Real(1)};
    ad::adam_step({&p}, {std::span<const Real>(g)}, st);
    CHECK(double(p.data[0]) == doctest::Approx(1.0 - 5e-5).epsilon(1e-6));
    CHECK(st.t == 1);

    // zero gradients from the very first step: parameters never move
    TensorData q({2});
    q.data = {Real(0.5), Real(-1.25)};
    const auto q_before = q.data;
    ad::AdamState st2;
    std::vector<Real> zero{Real(0), Real(0)};
    for (int i = 0; i < 5; ++i) ad::adam_step({&q}, {std::span<const Real>(zero)}, st2);
    CHECK(q.data == q_before);
    CHECK(st2.t == 5);
}

TEST_CASE("adam: constant gradient keeps updates within 1% of lr") {
    TensorData p({1});
    ad::AdamState st;
    st.lr = 1e-3;
    std::vector<Real> g{Real(1)};
    double prev = double(p.data[0]);
    for (int i = 0; i < 2; ++i) {
        ad::adam_step({&p}, {std::span<const Real>(g)}, st);
        const double delta = prev - double(p.data[0]);
        CHECK(delta == doctest::Approx(st.lr).epsilon(0.01));
        prev = double(p.data[0]);
    }
}

TEST_CASE("adam rejects non-finite gradients and shape mismatch") {
    TensorData p({2});
    ad::AdamState st;
    std::vector<Real> bad{Real(1), std::numeric_limits<Real>::infinity()};
    CHECK_THROWS_AS(ad::adam_step({&p}, {std::span<const Real>(bad)}, st), NumericError);
    std::vector<Real> wrong{Real(1)};
    ad::AdamState st2;
    CHECK_THROWS_AS(ad::adam_step({&p}, {std::span<const Real>(wrong)}, st2),
                    std::invalid_argument);
}

TEST_CASE("adam with lr = 0 is the identity on parameters") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        TensorData p = testutil::random_tensor({3, 2}, rng);
        const auto before = p.data;
        TensorData g = testutil::random_tensor({3, 2}, rng);
        ad::AdamState st;
        st.lr = 0.0;
        ad::adam_step({&p}, {std::span<const Real>(g.data)}, st);
        CHECK(p.data == before);
    }
}

TEST_CASE("conv2d linearity within 1e-5") {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 10; ++trial) {
        const int h = 4, w = 5, cin = 2, cout = 2, k = 3;
        const auto x = testutil::random_tensor({h, w, cin}, rng);
        const auto y = testutil::random_tensor({h, w, cin}, rng);
        const auto kernel = testutil::random_tensor({k, k, cin, cout}, rng);
        const TensorData bias({cout});
        const Real a = Real(testutil::urand(rng, -2, 2)), b = Real(testutil::urand(rng, -2, 2));

        TensorData combo({h, w, cin});
        for (std::size_t i = 0; i < combo.data.size(); ++i)
            combo.data[i] = a * x.data[i] + b * y.data[i];

        ad::Tape tape;
        Var kv = tape.leaf(kernel), bv = tape.leaf(bias);
        Var conv_combo = ad::conv2d(tape.leaf(combo), kv, bv);
        Var conv_x = ad::conv2d(tape.leaf(x), kv, bv);
        Var conv_y = ad::conv2d(tape.leaf(y), kv, bv);
        for (std::size_t i = 0; i < std::size_t(conv_combo.size()); ++i) {
            const double expect =
                double(a) * double(conv_x.data()[i]) + double(b) * double(conv_y.data()[i]);
            CHECK(std::fabs(double(conv_combo.data()[i]) - expect) < 1e-5);
        }
    }
}

TEST_CASE("full gradient suite passes") {
    const GradCheckReport report = run_gradient_suite(1);
    for (const auto& e : report.entries) {
        INFO(e.name << " err " << e.max_rel_err);
        CHECK(e.pass);
    }
}

TEST_CASE("corrupt backward hook is caught by the suite") {
    ad::testing::corrupt_elu_backward = true;
    const GradCheckReport report = run_gradient_suite(1);
    ad::testing::corrupt_elu_backward = false;
    CHECK_FALSE(report.all_pass());
}

TEST_SUITE_END();
