#include "iflow/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace iflow {

std::pair<FlowField, MissingMask> matches_to_sparse_flow(const MatchList& matches, int width,
                                                         int height) {
    FlowField flow(width, height);
    MissingMask mask(width, height, 1);
    std::vector<int> count(flow.size(), 0);
    for (const Match& m : matches) {
        if (m.x1 < 0 || m.x1 >= width || m.y1 < 0 || m.y1 >= height)
            throw std::invalid_argument("match source (" + std::to_string(m.x1) + "," +
                                        std::to_string(m.y1) + ") outside " +
                                        std::to_string(width) + "x" + std::to_string(height));
        const std::size_t i = flow.idx(m.x1, m.y1);
        flow.u[i] += float(m.x2 - m.x1);
        flow.v[i] += float(m.y2 - m.y1);
        count[i] += 1;
        mask.missing[i] = 0;
    }
    for (std::size_t i = 0; i < flow.size(); ++i) {
        if (count[i] > 1) {
            flow.u[i] /= float(count[i]);
            flow.v[i] /= float(count[i]);
        }
    }
    return {std::move(flow), std::move(mask)};
}

std::pair<FlowField, MissingMask> bidi_average(const FlowField& fwd, const MissingMask& fwd_mask,
                                               const FlowField& bwd, const MissingMask& bwd_mask) {
    if (fwd.width != bwd.width || fwd.height != bwd.height)
        throw std::invalid_argument("bidi_average: dimension mismatch");
    const int w = fwd.width, h = fwd.height;

    // Scatter the inverted backward map, averaging collisions.
    FlowField inv(w, h);
    std::vector<int> inv_count(inv.size(), 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = bwd.idx(x, y);
            if (bwd_mask.missing[i]) continue;
            const int tx = static_cast<int>(std::lround(double(x) + double(bwd.u[i])));
            const int ty = static_cast<int>(std::lround(double(y) + double(bwd.v[i])));
            if (tx < 0 || tx >= w || ty < 0 || ty >= h) continue;
            const std::size_t t = inv.idx(tx, ty);
            inv.u[t] += -bwd.u[i];
            inv.v[t] += -bwd.v[i];
            inv_count[t] += 1;
        }
    }

    FlowField out(w, h);
    MissingMask mask(w, h, 1);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double su = 0.0, sv = 0.0;
        int n = 0;
        if (!fwd_mask.missing[i]) {
            su += fwd.u[i];
            sv += fwd.v[i];
            n += 1;
        }
        su += inv.u[i];
        sv += inv.v[i];
        n += inv_count[i];
        if (n > 0) {
            out.u[i] = float(su / n);
            out.v[i] = float(sv / n);
            mask.missing[i] = 0;
        }
    }
    return {std::move(out), std::move(mask)};
}

namespace {

int padded_extent(int n, int factor) { return (n + factor - 1) / factor * factor; }

// Edge replication up to the next multiple of the factor.
template <typename T>
std::vector<T> pad_replicate(const std::vector<T>& src, int w, int h, int pw, int ph) {
    std::vector<T> dst(static_cast<std::size_t>(pw) * ph);
    for (int y = 0; y < ph; ++y) {
        const int sy = std::min(y, h - 1);
        for (int x = 0; x < pw; ++x) {
            const int sx = std::min(x, w - 1);
            dst[static_cast<std::size_t>(y) * pw + x] = src[static_cast<std::size_t>(sy) * w + sx];
        }
    }
    return dst;
}

}  // namespace

NetInput downsample_input(const FlowField& flow, const MissingMask& mask, const EdgeMap& edges,
                          int factor) {
    if (flow.width != mask.width || flow.height != mask.height || flow.width != edges.width ||
        flow.height != edges.height)
        throw std::invalid_argument("downsample_input: dimension mismatch");
    const int w = flow.width, h = flow.height;
    const int pw = padded_extent(w, factor), ph = padded_extent(h, factor);

    const std::vector<float>* u = &flow.u;
    const std::vector<float>* v = &flow.v;
    const std::vector<std::uint8_t>* mi = &mask.missing;
    const std::vector<float>* ed = &edges.strength;
    std::vector<float> up, vp, ep;
    std::vector<std::uint8_t> mp;
    if (pw != w || ph != h) {
        up = pad_replicate(flow.u, w, h, pw, ph);
        vp = pad_replicate(flow.v, w, h, pw, ph);
        mp = pad_replicate(mask.missing, w, h, pw, ph);
        ep = pad_replicate(edges.strength, w, h, pw, ph);
        u = &up;
        v = &vp;
        mi = &mp;
        ed = &ep;
    }

    NetInput out(ph / factor, pw / factor, h, w);
    for (int by = 0; by < out.grid_h; ++by) {
        for (int bx = 0; bx < out.grid_w; ++bx) {
            double su = 0.0, sv = 0.0;
            float emax = 0.f;
            int known = 0;
            for (int dy = 0; dy < factor; ++dy) {
                const std::size_t row = (std::size_t(by) * factor + dy) * pw + std::size_t(bx) * factor;
                for (int dx = 0; dx < factor; ++dx) {
                    const std::size_t i = row + dx;
                    if (!(*mi)[i]) {
                        su += (*u)[i];
                        sv += (*v)[i];
                        known += 1;
                    }
                    emax = std::max(emax, (*ed)[i]);
                }
            }
            if (known > 0) {
                out.at(by, bx, NetInput::kChanU) = float(su / known / factor);
                out.at(by, bx, NetInput::kChanV) = float(sv / known / factor);
                out.at(by, bx, NetInput::kChanMask) = 0.f;
            } else {
                out.at(by, bx, NetInput::kChanU) = 0.f;
                out.at(by, bx, NetInput::kChanV) = 0.f;
                out.at(by, bx, NetInput::kChanMask) = 1.f;
            }
            out.at(by, bx, NetInput::kChanEdges) = emax;
        }
    }
    return out;
}

FlowField downsample_gt(const FlowField& gt, int factor) {
    const int w = gt.width, h = gt.height;
    const int pw = padded_extent(w, factor), ph = padded_extent(h, factor);
    const std::vector<float>* u = &gt.u;
    const std::vector<float>* v = &gt.v;
    std::vector<float> up, vp;
    if (pw != w || ph != h) {
        up = pad_replicate(gt.u, w, h, pw, ph);
        vp = pad_replicate(gt.v, w, h, pw, ph);
        u = &up;
        v = &vp;
    }
    FlowField out(pw / factor, ph / factor, factor * gt.resolution_scale);
    const double norm = 1.0 / (double(factor) * factor);
    for (int by = 0; by < out.height; ++by) {
        for (int bx = 0; bx < out.width; ++bx) {
            double su = 0.0, sv = 0.0;
            for (int dy = 0; dy < factor; ++dy) {
                const std::size_t row = (std::size_t(by) * factor + dy) * pw + std::size_t(bx) * factor;
                for (int dx = 0; dx < factor; ++dx) {
                    su += (*u)[row + dx];
                    sv += (*v)[row + dx];
                }
            }
            const std::size_t o = out.idx(bx, by);
            out.u[o] = float(su * norm / factor);
            out.v[o] = float(sv * norm / factor);
        }
    }
    return out;
}

FlowField upsample_flow(const FlowField& pred, int out_h, int out_w, int factor) {
    const int gh = pred.height, gw = pred.width;
    const int fh = out_h > 0 ? out_h : gh * factor;
    const int fw = out_w > 0 ? out_w : gw * factor;
    if (fh > gh * factor || fw > gw * factor)
        throw std::invalid_argument("upsample_flow: requested extent exceeds grid * factor");
    FlowField out(fw, fh, pred.resolution_scale / factor);
    for (int y = 0; y < fh; ++y) {
        // align-corners-false placement: output pixel centers map back to
        // src = (dst + 0.5)/factor - 0.5, clamped at the borders
        const double sy = std::clamp((y + 0.5) / factor - 0.5, 0.0, double(gh - 1));
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, gh - 1);
        const double fy = sy - y0;
        for (int x = 0; x < fw; ++x) {
            const double sx = std::clamp((x + 0.5) / factor - 0.5, 0.0, double(gw - 1));
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, gw - 1);
            const double fx = sx - x0;
            const std::size_t i00 = pred.idx(x0, y0), i01 = pred.idx(x1, y0);
            const std::size_t i10 = pred.idx(x0, y1), i11 = pred.idx(x1, y1);
            const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx;
            const double w10 = fy * (1 - fx), w11 = fy * fx;
            const std::size_t o = out.idx(x, y);
            out.u[o] = float((w00 * pred.u[i00] + w01 * pred.u[i01] + w10 * pred.u[i10] +
                              w11 * pred.u[i11]) *
                             factor);
            out.v[o] = float((w00 * pred.v[i00] + w01 * pred.v[i01] + w10 * pred.v[i10] +
                              w11 * pred.v[i11]) *
                             factor);
        }
    }
    return out;
}

Sample flip_horizontal(const Sample& sample) {
    Sample out = sample;
    const int gh = sample.input.grid_h, gw = sample.input.grid_w;
    for (int y = 0; y < gh; ++y) {
        for (int x = 0; x < gw; ++x) {
            const int sx = gw - 1 - x;
            out.input.at(y, x, NetInput::kChanU) = -sample.input.at(y, sx, NetInput::kChanU);
            out.input.at(y, x, NetInput::kChanV) = sample.input.at(y, sx, NetInput::kChanV);
            out.input.at(y, x, NetInput::kChanMask) = sample.input.at(y, sx, NetInput::kChanMask);
            out.input.at(y, x, NetInput::kChanEdges) = sample.input.at(y, sx, NetInput::kChanEdges);
        }
    }
    for (int y = 0; y < sample.gt.height; ++y) {
        for (int x = 0; x < sample.gt.width; ++x) {
            const std::size_t src = sample.gt.idx(sample.gt.width - 1 - x, y);
            const std::size_t dst = sample.gt.idx(x, y);
            out.gt.u[dst] = -sample.gt.u[src];
            out.gt.v[dst] = sample.gt.v[src];
        }
    }
    return out;
}

NetInput without_edges(NetInput input) {
    for (int y = 0; y < input.grid_h; ++y)
        for (int x = 0; x < input.grid_w; ++x) input.at(y, x, NetInput::kChanEdges) = 0.f;
    return input;
}

bool net_input_valid(const NetInput& input) {
    for (int y = 0; y < input.grid_h; ++y) {
        for (int x = 0; x < input.grid_w; ++x) {
            const float m = input.at(y, x, NetInput::kChanMask);
            const float e = input.at(y, x, NetInput::kChanEdges);
            if (m != 0.f && m != 1.f) return false;
            if (e < 0.f || e > 1.f) return false;
            if (m == 1.f && (input.at(y, x, NetInput::kChanU) != 0.f ||
                             input.at(y, x, NetInput::kChanV) != 0.f))
                return false;
        }
    }
    return true;
}

}  // namespace iflow
