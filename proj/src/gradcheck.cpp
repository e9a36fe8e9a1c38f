#include "iflow/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <random>

#include "iflow/losses.hpp"
#include "iflow/model.hpp"

namespace iflow {

namespace {

using ad::Real;
using ad::TensorData;
using ad::Var;

constexpr double kFdEps = 1e-3;

#ifdef IFLOW_REAL_DOUBLE
constexpr double kTolerance = 1e-6;
#else
constexpr double kTolerance = 1e-3;
#endif

Real uniform_in(std::mt19937_64& rng, double lo, double hi) {
    const double u = double(rng() >> 40) * (1.0 / 16777216.0);
    return Real(lo + (hi - lo) * u);
}

TensorData random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
    TensorData t(std::move(shape));
    for (auto& v : t.data) v = uniform_in(rng, lo, hi);
    return t;
}

// Evaluates a scalar graph over the given inputs; `build` sees the inputs
// as tape leaves in order and returns the scalar loss.
using BuildFn = std::function<Var(ad::Tape&, const std::vector<Var>&)>;

double eval_loss(const std::vector<TensorData>& inputs, const BuildFn& build) {
    ad::Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    return double(build(tape, leaves).scalar());
}

// Max relative error between backward() and central differences over every
// element of every input.
double fd_check(std::vector<TensorData> inputs, const BuildFn& build) {
    ad::Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    tape.backward(build(tape, leaves));

    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto analytic = leaves[i].grad();
        for (std::size_t j = 0; j < inputs[i].data.size(); ++j) {
            const Real saved = inputs[i].data[j];
            inputs[i].data[j] = Real(double(saved) + kFdEps);
            const double f_plus = eval_loss(inputs, build);
            inputs[i].data[j] = Real(double(saved) - kFdEps);
            const double f_minus = eval_loss(inputs, build);
            inputs[i].data[j] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * kFdEps);
            const double a = double(analytic[j]);
            const double rel = std::fabs(a - fd) / std::max({1.0, std::fabs(a), std::fabs(fd)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// Scalar-ization of a tensor-valued op: sum(output * fixed random projection).
BuildFn projected(std::function<Var(ad::Tape&, const std::vector<Var>&)> op,
                  TensorData projection) {
    return [op = std::move(op), projection = std::move(projection)](
               ad::Tape& tape, const std::vector<Var>& leaves) {
        Var out = op(tape, leaves);
        Var proj = tape.leaf(projection);
        return ad::sum(ad::mul(out, proj));
    };
}

}  // namespace

bool GradCheckReport::all_pass() const {
    for (const auto& e : entries)
        if (!e.pass) return false;
    return !entries.empty();
}

double GradCheckReport::worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_err);
    return w;
}

GradCheckReport run_gradient_suite(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    GradCheckReport report;
    report.tolerance = kTolerance;
    report.epsilon = kFdEps;

    auto add = [&report](const std::string& name, double err) {
        report.entries.push_back({name, err, err < kTolerance});
    };

    // conv2d, gradients w.r.t. input, kernel and bias at once
    {
        const int h = 5, w = 6, cin = 3, cout = 2, k = 3;
        std::vector<TensorData> inputs;
        inputs.push_back(random_tensor({h, w, cin}, rng));
        inputs.push_back(random_tensor({k, k, cin, cout}, rng, -0.8, 0.8));
        inputs.push_back(random_tensor({cout}, rng, -0.5, 0.5));
        add("conv2d", fd_check(inputs, projected(
                                           [](ad::Tape&, const std::vector<Var>& l) {
                                               return ad::conv2d(l[0], l[1], l[2]);
                                           },
                                           random_tensor({h, w, cout}, rng))));
    }
    {
        // 7x7 kernel on a grid smaller than the kernel: padding-dominated case
        const int h = 3, w = 4, cin = 2, cout = 2, k = 7;
        std::vector<TensorData> inputs;
        inputs.push_back(random_tensor({h, w, cin}, rng));
        inputs.push_back(random_tensor({k, k, cin, cout}, rng, -0.5, 0.5));
        inputs.push_back(random_tensor({cout}, rng, -0.5, 0.5));
        add("conv2d_7x7", fd_check(inputs, projected(
                                               [](ad::Tape&, const std::vector<Var>& l) {
                                                   return ad::conv2d(l[0], l[1], l[2]);
                                               },
                                               random_tensor({h, w, cout}, rng))));
    }

    const ad::Shape grid{4, 5, 2};
    auto unary = [&](const std::string& name, std::function<Var(Var)> op, double lo, double hi,
                     ad::Shape out_shape) {
        std::vector<TensorData> inputs{random_tensor(grid, rng, lo, hi)};
        add(name, fd_check(inputs, projected(
                                       [op](ad::Tape&, const std::vector<Var>& l) {
                                           return op(l[0]);
                                       },
                                       random_tensor(std::move(out_shape), rng))));
    };
    unary("elu", [](Var x) { return ad::elu(x); }, -2.0, 2.0, grid);
    unary("scale", [](Var x) { return ad::scale(x, Real(-1.7)); }, -2.0, 2.0, grid);
    // keep |x| > eps so central differences never straddle the kink
    unary("abs", [](Var x) { return ad::abs(x); }, 0.01, 2.0, grid);
    unary("square", [](Var x) { return ad::square(x); }, -2.0, 2.0, grid);
    unary("sqrt_eps", [](Var x) { return ad::sqrt_eps(x); }, 0.05, 2.0, grid);
    unary("channel_sum", [](Var x) { return ad::channel_sum(x); }, -2.0, 2.0, {4, 5, 1});
    unary("slice", [](Var x) { return ad::slice(x, 1, 2, 3, 3); }, -2.0, 2.0, {3, 3, 2});

    auto binary = [&](const std::string& name, std::function<Var(Var, Var)> op) {
        std::vector<TensorData> inputs{random_tensor(grid, rng), random_tensor(grid, rng)};
        add(name, fd_check(inputs, projected(
                                       [op](ad::Tape&, const std::vector<Var>& l) {
                                           return op(l[0], l[1]);
                                       },
                                       random_tensor(grid, rng))));
    };
    binary("add", [](Var a, Var b) { return ad::add(a, b); });
    binary("sub", [](Var a, Var b) { return ad::sub(a, b); });
    binary("mul", [](Var a, Var b) { return ad::mul(a, b); });

    {
        std::vector<TensorData> inputs{random_tensor(grid, rng)};
        add("sum", fd_check(inputs, [](ad::Tape&, const std::vector<Var>& l) {
                return ad::sum(l[0]);
            }));
        add("mean", fd_check(inputs, [](ad::Tape&, const std::vector<Var>& l) {
                return ad::mean(l[0]);
            }));
    }

    // losses on random 4x5 fields
    {
        std::vector<TensorData> inputs{random_tensor(grid, rng), random_tensor(grid, rng)};
        add("epe_loss", fd_check(inputs, [](ad::Tape&, const std::vector<Var>& l) {
                return epe_loss(l[0], l[1]);
            }));
        add("ld_loss", fd_check(inputs, [](ad::Tape&, const std::vector<Var>& l) {
                return ld_loss(l[0], l[1]);
            }));
    }
    {
        // net loss over three detours with the default mid/last weighting
        std::vector<TensorData> inputs;
        for (int i = 0; i < 3; ++i) inputs.push_back(random_tensor(grid, rng));
        inputs.push_back(random_tensor(grid, rng));  // gt
        add("net_loss", fd_check(inputs, [](ad::Tape&, const std::vector<Var>& l) {
                NetLossOptions opts;
                opts.weights = {0.5f, 0.5f, 1.0f};
                return net_loss({l[0], l[1], l[2]}, l[3], opts).first;
            }));
    }

    // end-to-end: every parameter and the input of a 2-layer, C=3 model on
    // a 6x8 grid, through the full weighted loss
    {
        ModelConfig cfg;
        cfg.num_layers = 2;
        cfg.kernel_size = 7;
        cfg.hidden_channels = 3;
        ModelParams params = init_params(cfg, seed + 17);

        NetInput input(6, 8, 48, 64);
        std::mt19937_64 in_rng(seed + 31);
        for (int y = 0; y < input.grid_h; ++y) {
            for (int x = 0; x < input.grid_w; ++x) {
                const bool missing = (in_rng() % 4) == 0;
                input.at(y, x, NetInput::kChanMask) = missing ? 1.f : 0.f;
                input.at(y, x, NetInput::kChanU) =
                    missing ? 0.f : float(uniform_in(in_rng, -1.5, 1.5));
                input.at(y, x, NetInput::kChanV) =
                    missing ? 0.f : float(uniform_in(in_rng, -1.5, 1.5));
                input.at(y, x, NetInput::kChanEdges) = (in_rng() % 3) == 0 ? 1.f : 0.f;
            }
        }
        FlowField gt(input.grid_w, input.grid_h, 8);
        for (auto& u : gt.u) u = float(uniform_in(in_rng, -1.5, 1.5));
        for (auto& v : gt.v) v = float(uniform_in(in_rng, -1.5, 1.5));

        const std::vector<float> weights = cfg.effective_detour_weights();
        auto model_loss = [&](const ModelParams& p) {
            ad::Tape tape;
            ForwardPass pass = forward(tape, p, input);
            NetLossOptions opts;
            opts.weights = weights;
            return double(net_loss(pass.detours, flow_leaf(tape, gt), opts).first.scalar());
        };

        ad::Tape tape;
        ForwardPass pass = forward(tape, params, input);
        NetLossOptions opts;
        opts.weights = weights;
        auto [total, report] = net_loss(pass.detours, flow_leaf(tape, gt), opts);
        (void)report;
        tape.backward(total);

        double worst = 0.0;
        for (std::size_t t = 0; t < params.tensors.size(); ++t) {
            auto analytic = pass.param_leaves[t].grad();
            for (std::size_t j = 0; j < params.tensors[t].data.size(); ++j) {
                const Real saved = params.tensors[t].data[j];
                params.tensors[t].data[j] = Real(double(saved) + kFdEps);
                const double f_plus = model_loss(params);
                params.tensors[t].data[j] = Real(double(saved) - kFdEps);
                const double f_minus = model_loss(params);
                params.tensors[t].data[j] = saved;
                const double fd = (f_plus - f_minus) / (2.0 * kFdEps);
                const double a = double(analytic[j]);
                const double rel =
                    std::fabs(a - fd) / std::max({1.0, std::fabs(a), std::fabs(fd)});
                worst = std::max(worst, rel);
            }
        }
        add("model_params", worst);

        // and through the input grid itself
        double worst_in = 0.0;
        auto analytic_in = pass.input.grad();
        for (std::size_t j = 0; j < input.data.size(); ++j) {
            const float saved = input.data[j];
            input.data[j] = float(double(saved) + kFdEps);
            const double f_plus = model_loss(params);
            input.data[j] = float(double(saved) - kFdEps);
            const double f_minus = model_loss(params);
            input.data[j] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * kFdEps);
            const double a = double(analytic_in[j]);
            const double rel = std::fabs(a - fd) / std::max({1.0, std::fabs(a), std::fabs(fd)});
            worst_in = std::max(worst_in, rel);
        }
        add("model_input", worst_in);
    }

    return report;
}

}  // namespace iflow
