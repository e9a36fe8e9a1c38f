#include "iflow/ad.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace iflow::ad {

namespace testing {
bool corrupt_elu_backward = false;
}

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

bool shape_eq(const Shape& a, const Shape& b) { return a == b; }

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '{';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << '}';
    return os.str();
}

TensorData::TensorData(Shape s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != numel(shape))
        throw std::invalid_argument("TensorData: data length does not match shape " +
                                    shape_str(shape));
}

TensorData::TensorData(Shape s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel(shape)), Real(0));
}

bool all_finite(std::span<const Real> values) {
    for (Real v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

// --- Var accessors ---------------------------------------------------------

const Shape& Var::shape() const { return tape_->shape(*this); }
std::span<const Real> Var::data() const { return static_cast<const Tape*>(tape_)->data(*this); }
std::span<const Real> Var::grad() const { return static_cast<const Tape*>(tape_)->grad(*this); }
std::int64_t Var::size() const { return static_cast<std::int64_t>(data().size()); }

Real Var::scalar() const {
    auto d = data();
    if (d.size() != 1) throw std::invalid_argument("Var::scalar: tensor is not a scalar");
    return d[0];
}

// --- Tape -------------------------------------------------------------------

Tape::NodeStore& Tape::node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
const Tape::NodeStore& Tape::node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

Var Tape::make_node(Shape shape) {
    const auto n = static_cast<std::size_t>(numel(shape));
    NodeStore store;
    store.shape = std::move(shape);
    store.data.assign(n, Real(0));
    store.grad.assign(n, Real(0));
    nodes_.push_back(std::move(store));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(Shape shape) { return make_node(std::move(shape)); }

Var Tape::leaf(Shape shape, std::span<const Real> values) {
    if (static_cast<std::int64_t>(values.size()) != numel(shape))
        throw std::invalid_argument("Tape::leaf: value count does not match shape");
    Var v = make_node(std::move(shape));
    std::copy(values.begin(), values.end(), node(v.id()).data.begin());
    return v;
}

std::span<Real> Tape::data(Var v) { return node(v.id()).data; }
std::span<Real> Tape::data_at(int id) { return node(id).data; }
std::span<Real> Tape::grad_at(int id) { return node(id).grad; }
std::span<const Real> Tape::data(Var v) const { return node(v.id()).data; }
std::span<Real> Tape::grad(Var v) { return node(v.id()).grad; }
std::span<const Real> Tape::grad(Var v) const { return node(v.id()).grad; }
const Shape& Tape::shape(Var v) const { return node(v.id()).shape; }

void Tape::record(std::vector<int> input_ids, int output_id,
                  std::function<void(Tape&)> backward_fn) {
    ops_.push_back(OpRecord{std::move(input_ids), output_id, std::move(backward_fn)});
}

void Tape::backward(Var loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: loss from another tape");
    if (numel(shape(loss)) != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    shape_str(shape(loss)));
    node(loss.id()).grad[0] = Real(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward_fn(*this);
}

void Tape::clear() {
    nodes_.clear();
    ops_.clear();
}

// --- shape guards -----------------------------------------------------------

namespace {

void require_same_tape(Var a, Var b, const char* op) {
    if (a.tape() != b.tape() || a.tape() == nullptr)
        throw std::invalid_argument(std::string(op) + ": operands from different tapes");
}

void require_same_shape(Var a, Var b, const char* op) {
    require_same_tape(a, b, op);
    if (!shape_eq(a.shape(), b.shape()))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_grid(Var v, const char* op) {
    if (v.shape().size() != 3)
        throw std::invalid_argument(std::string(op) + ": expected {h,w,c} grid, got " +
                                    shape_str(v.shape()));
}

// Elementwise helper: out = f(a); backward dx += dfdx(x, y) * dy.
template <typename Fwd, typename Bwd>
Var unary_op(Var a, const char* /*name*/, Fwd fwd, Bwd bwd) {
    Tape& t = *a.tape();
    Var out = t.make_node(a.shape());
    auto in = t.data(a);
    auto o = t.data(out);
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = fwd(in[i]);
    const int aid = a.id(), oid = out.id();
    t.record({aid}, oid, [aid, oid, bwd](Tape& tp) {
        auto x = tp.data_at((aid));
        auto y = tp.data_at((oid));
        auto gy = tp.grad_at((oid));
        auto gx = tp.grad_at((aid));
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += bwd(x[i], y[i]) * gy[i];
    });
    return out;
}

}  // namespace

// --- elementwise ops ----------------------------------------------------------

Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    Tape& t = *a.tape();
    Var out = t.make_node(a.shape());
    auto da = t.data(a);
    auto db = t.data(b);
    auto o = t.data(out);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] + db[i];
    const int aid = a.id(), bid = b.id(), oid = out.id();
    t.record({aid, bid}, oid, [aid, bid, oid](Tape& tp) {
        auto gy = tp.grad_at((oid));
        auto ga = tp.grad_at((aid));
        auto gb = tp.grad_at((bid));
        for (std::size_t i = 0; i < gy.size(); ++i) {
            ga[i] += gy[i];
            gb[i] += gy[i];
        }
    });
    return out;
}

Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    Tape& t = *a.tape();
    Var out = t.make_node(a.shape());
    auto da = t.data(a);
    auto db = t.data(b);
    auto o = t.data(out);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] - db[i];
    const int aid = a.id(), bid = b.id(), oid = out.id();
    t.record({aid, bid}, oid, [aid, bid, oid](Tape& tp) {
        auto gy = tp.grad_at((oid));
        auto ga = tp.grad_at((aid));
        auto gb = tp.grad_at((bid));
        for (std::size_t i = 0; i < gy.size(); ++i) {
            ga[i] += gy[i];
            gb[i] -= gy[i];
        }
    });
    return out;
}

Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    Tape& t = *a.tape();
    Var out = t.make_node(a.shape());
    auto da = t.data(a);
    auto db = t.data(b);
    auto o = t.data(out);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] * db[i];
    const int aid = a.id(), bid = b.id(), oid = out.id();
    t.record({aid, bid}, oid, [aid, bid, oid](Tape& tp) {
        auto gy = tp.grad_at((oid));
        auto da2 = tp.data_at((aid));
        auto db2 = tp.data_at((bid));
        auto ga = tp.grad_at((aid));
        auto gb = tp.grad_at((bid));
        for (std::size_t i = 0; i < gy.size(); ++i) {
            ga[i] += db2[i] * gy[i];
            gb[i] += da2[i] * gy[i];
        }
    });
    return out;
}

Var scale(Var a, Real s) {
    return unary_op(
        a, "scale", [s](Real x) { return x * s; }, [s](Real, Real) { return s; });
}

Var abs(Var a) {
    return unary_op(
        a, "abs", [](Real x) { return std::fabs(x); },
        [](Real x, Real) { return x > Real(0) ? Real(1) : (x < Real(0) ? Real(-1) : Real(0)); });
}

Var square(Var a) {
    return unary_op(
        a, "square", [](Real x) { return x * x; }, [](Real x, Real) { return Real(2) * x; });
}

Var sqrt_eps(Var a, Real eps) {
    return unary_op(
        a, "sqrt_eps", [eps](Real x) { return std::sqrt(x + eps); },
        [](Real, Real y) { return Real(0.5) / y; });
}

Var elu(Var x) {
    return unary_op(
        x, "elu", [](Real v) { return v > Real(0) ? v : Real(std::expm1(double(v))); },
        [](Real v, Real y) {
            Real d = v > Real(0) ? Real(1) : y + Real(1);
            if (testing::corrupt_elu_backward) d += Real(0.25);
            return d;
        });
}

// --- reductions ---------------------------------------------------------------

Var sum(Var a) {
    Tape& t = *a.tape();
    Var out = t.make_node({1});
    auto in = t.data(a);
    double acc = 0.0;
    for (Real v : in) acc += double(v);
    t.data(out)[0] = Real(acc);
    const int aid = a.id(), oid = out.id();
    t.record({aid}, oid, [aid, oid](Tape& tp) {
        const Real g = tp.grad_at((oid))[0];
        auto ga = tp.grad_at((aid));
        for (Real& v : ga) v += g;
    });
    return out;
}

Var mean(Var a) {
    Tape& t = *a.tape();
    const auto n = a.size();
    if (n == 0) throw std::invalid_argument("mean: empty tensor");
    Var out = t.make_node({1});
    auto in = t.data(a);
    double acc = 0.0;
    for (Real v : in) acc += double(v);
    t.data(out)[0] = Real(acc / double(n));
    const int aid = a.id(), oid = out.id();
    t.record({aid}, oid, [aid, oid, n](Tape& tp) {
        const Real g = tp.grad_at((oid))[0] / Real(n);
        auto ga = tp.grad_at((aid));
        for (Real& v : ga) v += g;
    });
    return out;
}

Var channel_sum(Var grid) {
    require_grid(grid, "channel_sum");
    Tape& t = *grid.tape();
    const Shape& s = grid.shape();
    const int h = s[0], w = s[1], c = s[2];
    Var out = t.make_node({h, w, 1});
    auto in = t.data(grid);
    auto o = t.data(out);
    for (int p = 0; p < h * w; ++p) {
        double acc = 0.0;
        for (int ch = 0; ch < c; ++ch) acc += double(in[std::size_t(p) * c + ch]);
        o[std::size_t(p)] = Real(acc);
    }
    const int gid = grid.id(), oid = out.id();
    t.record({gid}, oid, [gid, oid, h, w, c](Tape& tp) {
        auto gy = tp.grad_at((oid));
        auto gx = tp.grad_at((gid));
        for (int p = 0; p < h * w; ++p)
            for (int ch = 0; ch < c; ++ch) gx[std::size_t(p) * c + ch] += gy[std::size_t(p)];
    });
    return out;
}

Var slice(Var grid, int i0, int j0, int h, int w) {
    require_grid(grid, "slice");
    const Shape& s = grid.shape();
    const int H = s[0], W = s[1], C = s[2];
    if (i0 < 0 || j0 < 0 || h <= 0 || w <= 0 || i0 + h > H || j0 + w > W)
        throw std::invalid_argument("slice: region out of range");
    Tape& t = *grid.tape();
    Var out = t.make_node({h, w, C});
    auto in = t.data(grid);
    auto o = t.data(out);
    for (int i = 0; i < h; ++i) {
        const Real* src = in.data() + (std::size_t(i0 + i) * W + j0) * C;
        Real* dst = o.data() + std::size_t(i) * w * C;
        std::copy(src, src + std::size_t(w) * C, dst);
    }
    const int gid = grid.id(), oid = out.id();
    t.record({gid}, oid, [gid, oid, i0, j0, h, w, W, C](Tape& tp) {
        auto gy = tp.grad_at((oid));
        auto gx = tp.grad_at((gid));
        for (int i = 0; i < h; ++i) {
            const Real* src = gy.data() + std::size_t(i) * w * C;
            Real* dst = gx.data() + (std::size_t(i0 + i) * W + j0) * C;
            for (int j = 0; j < w * C; ++j) dst[j] += src[j];
        }
    });
    return out;
}

// --- convolution ----------------------------------------------------------------

void conv2d_forward(std::span<const Real> input, const Shape& in_shape,
                    std::span<const Real> kernel, const Shape& k_shape,
                    std::span<const Real> bias, std::span<Real> out) {
    const int h = in_shape[0], w = in_shape[1], cin = in_shape[2];
    const int k = k_shape[0], cout = k_shape[3];
    const int pad = (k - 1) / 2;
    std::vector<double> acc(static_cast<std::size_t>(cout));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int co = 0; co < cout; ++co) acc[std::size_t(co)] = double(bias[std::size_t(co)]);
            for (int dy = 0; dy < k; ++dy) {
                const int iy = y + dy - pad;
                if (iy < 0 || iy >= h) continue;
                for (int dx = 0; dx < k; ++dx) {
                    const int ix = x + dx - pad;
                    if (ix < 0 || ix >= w) continue;
                    const Real* in_px = input.data() + (std::size_t(iy) * w + ix) * cin;
                    const Real* k_tap = kernel.data() + (std::size_t(dy) * k + dx) * cin * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const double a = double(in_px[ci]);
                        const Real* kr = k_tap + std::size_t(ci) * cout;
                        for (int co = 0; co < cout; ++co)
                            acc[std::size_t(co)] += a * double(kr[co]);
                    }
                }
            }
            Real* out_px = out.data() + (std::size_t(y) * w + x) * cout;
            for (int co = 0; co < cout; ++co) out_px[co] = Real(acc[std::size_t(co)]);
        }
    }
}

namespace {

// Gradient w.r.t. input: correlate upstream grad with the kernel.
void conv2d_backward_input(std::span<const Real> gout, std::span<const Real> kernel, int h, int w,
                           int cin, int cout, int k, std::vector<double>& gin) {
    const int pad = (k - 1) / 2;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Real* g = gout.data() + (std::size_t(y) * w + x) * cout;
            for (int dy = 0; dy < k; ++dy) {
                const int iy = y + dy - pad;
                if (iy < 0 || iy >= h) continue;
                for (int dx = 0; dx < k; ++dx) {
                    const int ix = x + dx - pad;
                    if (ix < 0 || ix >= w) continue;
                    const Real* k_tap = kernel.data() + (std::size_t(dy) * k + dx) * cin * cout;
                    double* gi = gin.data() + (std::size_t(iy) * w + ix) * cin;
                    for (int ci = 0; ci < cin; ++ci) {
                        const Real* kr = k_tap + std::size_t(ci) * cout;
                        double s = 0.0;
                        for (int co = 0; co < cout; ++co) s += double(kr[co]) * double(g[co]);
                        gi[ci] += s;
                    }
                }
            }
        }
    }
}

void conv2d_backward_kernel(std::span<const Real> gout, std::span<const Real> input, int h, int w,
                            int cin, int cout, int k, std::vector<double>& gk,
                            std::vector<double>& gb) {
    const int pad = (k - 1) / 2;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Real* g = gout.data() + (std::size_t(y) * w + x) * cout;
            for (int co = 0; co < cout; ++co) gb[std::size_t(co)] += double(g[co]);
            for (int dy = 0; dy < k; ++dy) {
                const int iy = y + dy - pad;
                if (iy < 0 || iy >= h) continue;
                for (int dx = 0; dx < k; ++dx) {
                    const int ix = x + dx - pad;
                    if (ix < 0 || ix >= w) continue;
                    const Real* in_px = input.data() + (std::size_t(iy) * w + ix) * cin;
                    double* gk_tap = gk.data() + (std::size_t(dy) * k + dx) * cin * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const double a = double(in_px[ci]);
                        double* gkr = gk_tap + std::size_t(ci) * cout;
                        for (int co = 0; co < cout; ++co) gkr[co] += a * double(g[co]);
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(Var input, Var kernel, Var bias) {
    require_same_tape(input, kernel, "conv2d");
    require_same_tape(input, bias, "conv2d");
    require_grid(input, "conv2d");
    const Shape& is = input.shape();
    const Shape& ks = kernel.shape();
    if (ks.size() != 4 || ks[0] != ks[1])
        throw std::invalid_argument("conv2d: kernel must be {k,k,c_in,c_out}, got " +
                                    shape_str(ks));
    if (ks[0] % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
    if (ks[2] != is[2])
        throw std::invalid_argument("conv2d: input channels " + std::to_string(is[2]) +
                                    " != kernel channels " + std::to_string(ks[2]));
    if (bias.shape().size() != 1 || bias.shape()[0] != ks[3])
        throw std::invalid_argument("conv2d: bias must be {c_out}");
    if (!all_finite(input.data()) || !all_finite(kernel.data()) || !all_finite(bias.data()))
        throw NumericError("conv2d: non-finite input");

    Tape& t = *input.tape();
    const int h = is[0], w = is[1], cin = is[2], k = ks[0], cout = ks[3];
    Var out = t.make_node({h, w, cout});
    conv2d_forward(t.data(input), is, t.data(kernel), ks, t.data(bias), t.data(out));

    const int iid = input.id(), kid = kernel.id(), bid = bias.id(), oid = out.id();
    t.record({iid, kid, bid}, oid, [=](Tape& tp) {
        auto gout = tp.grad_at((oid));
        auto in = tp.data_at((iid));
        auto kd = tp.data_at((kid));

        std::vector<double> gin(static_cast<std::size_t>(h) * w * cin, 0.0);
        conv2d_backward_input(gout, kd, h, w, cin, cout, k, gin);
        auto gi = tp.grad_at((iid));
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += Real(gin[i]);

        std::vector<double> gk(static_cast<std::size_t>(k) * k * cin * cout, 0.0);
        std::vector<double> gb(static_cast<std::size_t>(cout), 0.0);
        conv2d_backward_kernel(gout, in, h, w, cin, cout, k, gk, gb);
        auto gkr = tp.grad_at((kid));
        for (std::size_t i = 0; i < gkr.size(); ++i) gkr[i] += Real(gk[i]);
        auto gbr = tp.grad_at((bid));
        for (std::size_t i = 0; i < gbr.size(); ++i) gbr[i] += Real(gb[i]);
    });
    return out;
}

// --- Adam ------------------------------------------------------------------------

void adam_step(std::vector<TensorData*> params, const std::vector<std::span<const Real>>& grads,
               AdamState& state) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i]->data.size(), Real(0));
            state.v[i].assign(params[i]->data.size(), Real(0));
        }
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: state sized for a different parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != params[i]->data.size() ||
            state.m[i].size() != params[i]->data.size())
            throw std::invalid_argument("adam_step: shape mismatch at parameter " +
                                        std::to_string(i));
        if (!all_finite(grads[i]))
            throw NumericError("adam_step: non-finite gradient at parameter " + std::to_string(i));
    }

    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, double(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i]->data;
        auto g = grads[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = double(g[j]);
            const double mj = state.beta1 * double(m[j]) + (1.0 - state.beta1) * gj;
            const double vj = state.beta2 * double(v[j]) + (1.0 - state.beta2) * gj * gj;
            m[j] = Real(mj);
            v[j] = Real(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            p[j] = Real(double(p[j]) - state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

}  // namespace iflow::ad
