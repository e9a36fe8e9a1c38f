#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "iflow/error.hpp"

// Reverse-mode autodiff over an explicit tape. The op set is exactly what
// the interpolation network and its losses need: same-padded convolution,
// elu, a handful of elementwise/reduction primitives, spatial slicing, and
// a channel reduction. Shapes are static; grids are {h, w, c} row-major
// (channel fastest). No broadcasting.
//
// A Tape and its Vars belong to one thread at a time. Run one backward()
// per tape; leaf gradients are read out afterwards and the tape discarded.

namespace iflow::ad {

#ifdef IFLOW_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

// Smoothing added under every square root that feeds a Euclidean distance,
// so the gradient at zero distance stays finite.
inline constexpr Real kEpsStab = Real(1e-9);

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
bool shape_eq(const Shape& a, const Shape& b);
std::string shape_str(const Shape& shape);

// Plain tensor outside any tape: parameters, optimizer buffers, frozen data.
struct TensorData {
    Shape shape;
    std::vector<Real> data;

    TensorData() = default;
    TensorData(Shape s, std::vector<Real> d);
    explicit TensorData(Shape s);  // zero-filled

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
};

class Tape;

// Cheap handle to a tape-owned tensor.
class Var {
public:
    Var() = default;

    const Shape& shape() const;
    std::span<const Real> data() const;
    std::span<const Real> grad() const;
    Real scalar() const;  // value of a single-element tensor
    std::int64_t size() const;
    int id() const { return id_; }
    Tape* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Shape shape);  // zero-filled
    Var leaf(Shape shape, std::span<const Real> values);
    Var leaf(const TensorData& t) { return leaf(t.shape, t.data); }

    std::span<Real> data(Var v);
    std::span<const Real> data(Var v) const;
    std::span<Real> grad(Var v);
    std::span<const Real> grad(Var v) const;
    const Shape& shape(Var v) const;

    // Populates grads of every tensor reachable from `loss` (scalar).
    void backward(Var loss);

    std::size_t num_nodes() const { return nodes_.size(); }
    std::size_t num_ops() const { return ops_.size(); }
    void clear();

    // Low-level interface used by the op implementations.
    Var make_node(Shape shape);
    void record(std::vector<int> input_ids, int output_id,
                std::function<void(Tape&)> backward_fn);
    std::span<Real> data_at(int id);
    std::span<Real> grad_at(int id);

private:
    struct NodeStore {
        Shape shape;
        std::vector<Real> data;
        std::vector<Real> grad;
    };
    struct OpRecord {
        std::vector<int> inputs;
        int output;
        std::function<void(Tape&)> backward_fn;
    };

    NodeStore& node(int id);
    const NodeStore& node(int id) const;

    std::deque<NodeStore> nodes_;  // deque: stable element addresses
    std::vector<OpRecord> ops_;
};

// --- differentiable primitives ------------------------------------------

// Same-size convolution: input {h,w,c_in}, kernel {k,k,c_in,c_out} with k
// odd, bias {c_out}; zero padding of (k-1)/2 per side. Differentiable in
// all three arguments. Throws on channel mismatch, even kernel, or
// non-finite values in any argument.
Var conv2d(Var input, Var kernel, Var bias);

Var elu(Var x);  // x for x > 0, e^x - 1 otherwise

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);        // elementwise
Var scale(Var a, Real s);     // multiply by scalar constant
Var abs(Var a);               // subgradient at 0 is 0
Var square(Var a);
Var sqrt_eps(Var a, Real eps = kEpsStab);  // sqrt(x + eps)

Var sum(Var a);   // -> {1}; 64-bit partial sums
Var mean(Var a);  // -> {1}
Var channel_sum(Var grid);  // {h,w,c} -> {h,w,1}

// Subregion view of a grid, rows [i0, i0+h), cols [j0, j0+w); backward
// scatters into the source region.
Var slice(Var grid, int i0, int j0, int h, int w);

// --- non-differentiating helpers ----------------------------------------

// Raw forward convolution on plain buffers (the same optimized path conv2d
// records on the tape). Exposed so inference does not need a tape.
void conv2d_forward(std::span<const Real> input, const Shape& in_shape,
                    std::span<const Real> kernel, const Shape& k_shape,
                    std::span<const Real> bias, std::span<Real> out);

bool all_finite(std::span<const Real> values);

// --- Adam ----------------------------------------------------------------

// One optimizer state for an ordered list of parameter tensors. Moment
// buffers are allocated on first use and keyed by position in the list.
struct AdamState {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
    std::vector<std::vector<Real>> m;
    std::vector<std::vector<Real>> v;
};

// Bias-corrected Adam update applied in place. Throws NumericError on
// non-finite gradients, std::invalid_argument on shape disagreement.
void adam_step(std::vector<TensorData*> params,
               const std::vector<std::span<const Real>>& grads,
               AdamState& state);

namespace testing {
// Test hook: when set, the elu backward rule is deliberately wrong. Used
// to prove the finite-difference harness can actually fail.
extern bool corrupt_elu_backward;
}  // namespace testing

}  // namespace iflow::ad
