#pragma once

#include <string>
#include <utility>
#include <vector>

#include "iflow/flow_types.hpp"

namespace iflow {

// The network's input grid: (h/8) x (w/8) x 4, channels (u, v, missing
// mask, edges), displacements in downsampled-grid cell units. Wherever the
// mask channel is 1 the flow channels are exactly 0. Keeps the original
// full-resolution extent so predictions can be cropped after upsampling.
struct NetInput {
    int grid_h = 0;
    int grid_w = 0;
    int full_h = 0;
    int full_w = 0;
    std::vector<float> data;  // grid_h * grid_w * 4, channel fastest

    static constexpr int kChannels = 4;
    static constexpr int kChanU = 0, kChanV = 1, kChanMask = 2, kChanEdges = 3;

    NetInput() = default;
    NetInput(int gh, int gw, int fh, int fw)
        : grid_h(gh),
          grid_w(gw),
          full_h(fh),
          full_w(fw),
          data(static_cast<std::size_t>(gh) * gw * kChannels, 0.f) {}

    float& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * grid_w + x) * kChannels + c];
    }
    float at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * grid_w + x) * kChannels + c];
    }
};

// One training/eval unit: the input grid plus ground truth at the same
// downsampled resolution (grid-cell units).
struct Sample {
    NetInput input;
    FlowField gt;  // resolution_scale = 8
    std::string id;
};

// Pixel (x1,y1) receives displacement (x2-x1, y2-y1); several matches on
// the same source pixel are averaged. Everything else is zero with the
// missing bit set. Out-of-bounds source coordinates are an error.
std::pair<FlowField, MissingMask> matches_to_sparse_flow(const MatchList& matches, int width,
                                                         int height);

// Densify by combining the forward map with the inverted backward map:
// each known backward pixel q scatters -bwd(q) to round(q + bwd(q)), and
// every pixel averages whatever contributions it received (forward value
// plus scattered ones). Missing only where neither side contributed.
std::pair<FlowField, MissingMask> bidi_average(const FlowField& fwd, const MissingMask& fwd_mask,
                                               const FlowField& bwd, const MissingMask& bwd_mask);

// Per block: flow = mean over known pixels scaled by 1/factor, mask = 1
// only for fully-missing blocks, edges = block max. Inputs not divisible
// by the factor are padded by edge replication first.
NetInput downsample_input(const FlowField& flow, const MissingMask& mask, const EdgeMap& edges,
                          int factor = 8);

// Dense ground truth: plain block mean scaled by 1/factor.
FlowField downsample_gt(const FlowField& gt, int factor = 8);

// Bilinear upsampling (align-corners-false) with displacement values
// scaled by the factor; cropped to (out_h, out_w). Passing 0 for the
// output size keeps the full grid*factor extent.
FlowField upsample_flow(const FlowField& pred, int out_h = 0, int out_w = 0, int factor = 8);

// Left-right mirror of every channel and the ground truth; the horizontal
// displacement channel flips sign.
Sample flip_horizontal(const Sample& sample);

// Zeroes the edge channel (edges-ablation experiments).
NetInput without_edges(NetInput input);

// True when flow channels are exactly zero under every missing pixel and
// the mask/edge channels are in range.
bool net_input_valid(const NetInput& input);

}  // namespace iflow
