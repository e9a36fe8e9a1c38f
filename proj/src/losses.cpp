#include "iflow/losses.hpp"

#include <cmath>

namespace iflow {

using ad::Var;

double epe(float u1, float v1, float u2, float v2) {
    const double du = double(u1) - double(u2);
    const double dv = double(v1) - double(v2);
    return std::sqrt(du * du + dv * dv + double(ad::kEpsStab));
}

Var flow_leaf(ad::Tape& tape, const FlowField& flow) {
    std::vector<ad::Real> data(flow.size() * 2);
    for (std::size_t i = 0; i < flow.size(); ++i) {
        data[i * 2 + 0] = ad::Real(flow.u[i]);
        data[i * 2 + 1] = ad::Real(flow.v[i]);
    }
    return tape.leaf({flow.height, flow.width, 2}, data);
}

Var epe_map(Var a, Var b) { return ad::sqrt_eps(ad::channel_sum(ad::square(ad::sub(a, b)))); }

namespace {

void require_flow_grid(Var v, const char* op) {
    if (v.shape().size() != 3 || v.shape()[2] != 2)
        throw std::invalid_argument(std::string(op) + ": expected {h,w,2} grid, got " +
                                    ad::shape_str(v.shape()));
}

// {h,w,1} constant of mask values (1 = keep).
Var keep_leaf(ad::Tape& tape, const MissingMask& valid, int h, int w) {
    if (valid.height != h || valid.width != w)
        throw std::invalid_argument("loss mask: dimension mismatch");
    std::vector<ad::Real> data(std::size_t(h) * w);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = valid.missing[i] ? ad::Real(0) : ad::Real(1);
    return tape.leaf({h, w, 1}, data);
}

std::int64_t count_valid(const MissingMask& valid) {
    std::int64_t n = 0;
    for (auto m : valid.missing) n += m ? 0 : 1;
    return n;
}

}  // namespace

Var epe_loss(Var pred, Var gt, const MissingMask* valid) {
    require_flow_grid(pred, "epe_loss");
    require_flow_grid(gt, "epe_loss");
    if (!ad::shape_eq(pred.shape(), gt.shape()))
        throw std::invalid_argument("epe_loss: shape mismatch");
    const int h = pred.shape()[0], w = pred.shape()[1];
    Var per_pixel = epe_map(pred, gt);
    if (!valid) return ad::mean(per_pixel);
    ad::Tape& tape = *pred.tape();
    const std::int64_t n = count_valid(*valid);
    if (n == 0) throw std::invalid_argument("epe_loss: empty validity mask");
    Var kept = ad::mul(per_pixel, keep_leaf(tape, *valid, h, w));
    return ad::scale(ad::sum(kept), ad::Real(1.0 / double(n)));
}

Var ld_loss(Var pred, Var gt, const MissingMask* valid) {
    require_flow_grid(pred, "ld_loss");
    require_flow_grid(gt, "ld_loss");
    if (!ad::shape_eq(pred.shape(), gt.shape()))
        throw std::invalid_argument("ld_loss: shape mismatch");
    ad::Tape& tape = *pred.tape();
    const int h = pred.shape()[0], w = pred.shape()[1];

    std::int64_t n = std::int64_t(h) * w;
    std::optional<MissingMask> vert_keep, horz_keep;
    if (valid) {
        n = count_valid(*valid);
        if (n == 0) throw std::invalid_argument("ld_loss: empty validity mask");
        // A neighbor term survives only when both endpoints are valid.
        vert_keep = MissingMask(w, h - 1);
        for (int y = 0; y + 1 < h; ++y)
            for (int x = 0; x < w; ++x)
                vert_keep->missing[vert_keep->idx(x, y)] =
                    (valid->missing[valid->idx(x, y + 1)] || valid->missing[valid->idx(x, y)]) ? 1
                                                                                               : 0;
        horz_keep = MissingMask(w - 1, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x + 1 < w; ++x)
                horz_keep->missing[horz_keep->idx(x, y)] =
                    (valid->missing[valid->idx(x + 1, y)] || valid->missing[valid->idx(x, y)]) ? 1
                                                                                               : 0;
    }

    Var acc;
    if (h > 1) {
        Var dp = epe_map(ad::slice(pred, 1, 0, h - 1, w), ad::slice(pred, 0, 0, h - 1, w));
        Var dg = epe_map(ad::slice(gt, 1, 0, h - 1, w), ad::slice(gt, 0, 0, h - 1, w));
        Var term = ad::abs(ad::sub(dp, dg));
        if (vert_keep) term = ad::mul(term, keep_leaf(tape, *vert_keep, h - 1, w));
        acc = ad::sum(term);
    }
    if (w > 1) {
        Var dp = epe_map(ad::slice(pred, 0, 1, h, w - 1), ad::slice(pred, 0, 0, h, w - 1));
        Var dg = epe_map(ad::slice(gt, 0, 1, h, w - 1), ad::slice(gt, 0, 0, h, w - 1));
        Var term = ad::abs(ad::sub(dp, dg));
        if (horz_keep) term = ad::mul(term, keep_leaf(tape, *horz_keep, h, w - 1));
        Var s = ad::sum(term);
        acc = acc.valid() ? ad::add(acc, s) : s;
    }
    if (!acc.valid()) return tape.leaf({1});  // 1x1 field: no neighbor terms at all
    return ad::scale(acc, ad::Real(1.0 / double(n)));
}

double LossReport::recombined(const std::vector<float>& weights, bool use_ld) const {
    double s = 0.0;
    for (std::size_t l = 0; l < epe_per_layer.size(); ++l)
        s += double(weights[l]) * (epe_per_layer[l] + (use_ld ? ld_per_layer[l] : 0.0));
    return s;
}

std::pair<Var, LossReport> net_loss(const std::vector<Var>& detours, Var gt,
                                    const NetLossOptions& options) {
    if (detours.empty()) throw std::invalid_argument("net_loss: no detour outputs");
    if (options.weights.size() != detours.size())
        throw std::invalid_argument("net_loss: " + std::to_string(options.weights.size()) +
                                    " weights for " + std::to_string(detours.size()) + " detours");

    LossReport report;
    report.pixels = std::int64_t(gt.shape()[0]) * gt.shape()[1];
    Var total;
    for (std::size_t l = 0; l < detours.size(); ++l) {
        Var le = epe_loss(detours[l], gt, options.valid);
        report.epe_per_layer.push_back(double(le.scalar()));
        Var layer = le;
        if (options.use_ld) {
            Var ll = ld_loss(detours[l], gt, options.valid);
            report.ld_per_layer.push_back(double(ll.scalar()));
            layer = ad::add(le, ll);
        } else {
            report.ld_per_layer.push_back(0.0);
        }
        if (options.weights[l] == 0.f) continue;  // keep zero-weight layers off the tape path
        Var weighted = ad::scale(layer, ad::Real(options.weights[l]));
        total = total.valid() ? ad::add(total, weighted) : weighted;
    }
    if (!total.valid()) total = gt.tape()->leaf({1});
    report.total = double(total.scalar());
    return {total, report};
}

}  // namespace iflow
