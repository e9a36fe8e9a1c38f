#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iflow/ad.hpp"
#include "iflow/preprocess.hpp"

namespace iflow {

// Ten 7x7 conv + elu layers by default, each with a linear 1x1 detour head
// reading the layer's activations out as a 2-channel flow map. No pooling
// or striding anywhere; spatial extent is preserved by zero padding.
struct ModelConfig {
    int num_layers = 10;
    int kernel_size = 7;
    int hidden_channels = 64;
    int input_channels = 4;
    std::uint64_t seed = 1;
    // Per-detour loss weights; empty means the default of 0.5 for every
    // layer but the last, which gets 1.
    std::vector<float> detour_weights;

    std::vector<float> effective_detour_weights() const;
    void validate() const;
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

// Parameter tensors in a fixed order: for each layer l, the trunk kernel
// {k,k,c_in,C} and bias {C}, then the detour kernel {1,1,C,2} and bias {2}.
struct ModelParams {
    ModelConfig config;
    std::vector<ad::TensorData> tensors;

    static constexpr int kPerLayer = 4;
    ad::TensorData& trunk_kernel(int l) { return tensors[std::size_t(l) * kPerLayer + 0]; }
    ad::TensorData& trunk_bias(int l) { return tensors[std::size_t(l) * kPerLayer + 1]; }
    ad::TensorData& detour_kernel(int l) { return tensors[std::size_t(l) * kPerLayer + 2]; }
    ad::TensorData& detour_bias(int l) { return tensors[std::size_t(l) * kPerLayer + 3]; }
    const ad::TensorData& trunk_kernel(int l) const { return tensors[std::size_t(l) * kPerLayer]; }
    const ad::TensorData& detour_kernel(int l) const {
        return tensors[std::size_t(l) * kPerLayer + 2];
    }
};

// Uniform(+-sqrt(6/fan_in)) kernels, zero biases, reproducible per seed.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Everything the training step needs back from a forward run: per-layer
// detour outputs {h,w,2} plus the parameter leaves to read gradients from
// (aligned with ModelParams::tensors).
struct ForwardPass {
    std::vector<ad::Var> detours;
    std::vector<ad::Var> param_leaves;
    ad::Var input;
};

ForwardPass forward(ad::Tape& tape, const ModelParams& params, const NetInput& input);

// Last detour output as a flow field on the /8 grid.
FlowField predict(const ModelParams& params, const NetInput& input);

// Model-only checkpoint payload ("IFLW" container, format version 1);
// the training module wraps this with optimizer state.
void write_params(std::ostream& os, const ModelParams& params);
ModelParams read_params(std::istream& is);

}  // namespace iflow
