#include "iflow/model.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <random>

#include "iflow/detail/binio.hpp"

namespace iflow {

std::vector<float> ModelConfig::effective_detour_weights() const {
    if (!detour_weights.empty()) return detour_weights;
    std::vector<float> w(static_cast<std::size_t>(num_layers), 0.5f);
    w.back() = 1.0f;
    return w;
}

void ModelConfig::validate() const {
    if (num_layers < 1) throw ConfigError("model: num_layers must be >= 1");
    if (kernel_size < 1 || kernel_size % 2 == 0)
        throw ConfigError("model: kernel_size must be odd and positive");
    if (hidden_channels < 1) throw ConfigError("model: hidden_channels must be >= 1");
    if (input_channels < 1) throw ConfigError("model: input_channels must be >= 1");
    if (!detour_weights.empty() &&
        detour_weights.size() != static_cast<std::size_t>(num_layers))
        throw ConfigError("model: detour weight count must equal num_layers");
    for (float w : detour_weights)
        if (w < 0.f) throw ConfigError("model: detour weights must be nonnegative");
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.num_layers == b.num_layers && a.kernel_size == b.kernel_size &&
           a.hidden_channels == b.hidden_channels && a.input_channels == b.input_channels &&
           a.detour_weights == b.detour_weights;
}

namespace {

// Drawn from the top 24 bits so results do not depend on the standard
// library's distribution implementation.
float uniform_in(std::mt19937_64& rng, float lo, float hi) {
    const double u = double(rng() >> 40) * (1.0 / 16777216.0);
    return float(lo + (hi - lo) * u);
}

ad::TensorData uniform_tensor(ad::Shape shape, int fan_in, std::mt19937_64& rng) {
    const float bound = std::sqrt(6.f / float(fan_in));
    ad::TensorData t(std::move(shape));
    for (auto& v : t.data) v = ad::Real(uniform_in(rng, -bound, bound));
    return t;
}

}  // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams params;
    params.config = config;
    params.config.seed = seed;
    std::mt19937_64 rng(seed);
    const int k = config.kernel_size;
    const int C = config.hidden_channels;
    int c_prev = config.input_channels;
    for (int l = 0; l < config.num_layers; ++l) {
        params.tensors.push_back(uniform_tensor({k, k, c_prev, C}, k * k * c_prev, rng));
        params.tensors.emplace_back(ad::Shape{C});
        params.tensors.push_back(uniform_tensor({1, 1, C, 2}, C, rng));
        params.tensors.emplace_back(ad::Shape{2});
        c_prev = C;
    }
    return params;
}

ForwardPass forward(ad::Tape& tape, const ModelParams& params, const NetInput& input) {
    if (input.grid_h < 1 || input.grid_w < 1)
        throw std::invalid_argument("forward: empty input grid");
    if (NetInput::kChannels != params.config.input_channels)
        throw std::invalid_argument("forward: input channel count mismatch");

    ForwardPass pass;
    pass.param_leaves.reserve(params.tensors.size());
    for (const auto& t : params.tensors) pass.param_leaves.push_back(tape.leaf(t));

    std::vector<ad::Real> in_data(input.data.size());
    for (std::size_t i = 0; i < in_data.size(); ++i) in_data[i] = ad::Real(input.data[i]);
    pass.input = tape.leaf({input.grid_h, input.grid_w, NetInput::kChannels}, in_data);

    ad::Var x = pass.input;
    for (int l = 0; l < params.config.num_layers; ++l) {
        const std::size_t base = std::size_t(l) * ModelParams::kPerLayer;
        x = ad::elu(ad::conv2d(x, pass.param_leaves[base + 0], pass.param_leaves[base + 1]));
        pass.detours.push_back(
            ad::conv2d(x, pass.param_leaves[base + 2], pass.param_leaves[base + 3]));
    }
    return pass;
}

FlowField predict(const ModelParams& params, const NetInput& input) {
    ad::Tape tape;
    ForwardPass pass = forward(tape, params, input);
    const ad::Var last = pass.detours.back();
    FlowField out(input.grid_w, input.grid_h, 8);
    auto d = last.data();
    for (int y = 0; y < input.grid_h; ++y) {
        for (int x = 0; x < input.grid_w; ++x) {
            const std::size_t p = std::size_t(y) * input.grid_w + x;
            out.u[out.idx(x, y)] = float(d[p * 2 + 0]);
            out.v[out.idx(x, y)] = float(d[p * 2 + 1]);
        }
    }
    return out;
}

namespace {
constexpr char kMagic[4] = {'I', 'F', 'L', 'W'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void write_params(std::ostream& os, const ModelParams& params) {
    using namespace detail;
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(params.config.num_layers));
    put_u32(os, static_cast<std::uint32_t>(params.config.kernel_size));
    put_u32(os, static_cast<std::uint32_t>(params.config.hidden_channels));
    put_u32(os, static_cast<std::uint32_t>(params.config.input_channels));
    put_u64(os, params.config.seed);
    put_u32(os, static_cast<std::uint32_t>(params.config.detour_weights.size()));
    for (float w : params.config.detour_weights) put_f32(os, w);
    put_u32(os, static_cast<std::uint32_t>(params.tensors.size()));
    for (const auto& t : params.tensors) {
        put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
        for (ad::Real v : t.data) put_f32(os, float(v));
    }
}

ModelParams read_params(std::istream& is) {
    using namespace detail;
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("checkpoint: bad magic (expected IFLW)");
    const std::uint32_t version = get_u32(is);
    if (version != kVersion)
        throw IoError("checkpoint: unsupported format version " + std::to_string(version));
    ModelParams params;
    params.config.num_layers = static_cast<int>(get_u32(is));
    params.config.kernel_size = static_cast<int>(get_u32(is));
    params.config.hidden_channels = static_cast<int>(get_u32(is));
    params.config.input_channels = static_cast<int>(get_u32(is));
    params.config.seed = get_u64(is);
    const std::uint32_t nw = get_u32(is);
    if (!is || nw > 4096) throw IoError("checkpoint: corrupt weight list");
    params.config.detour_weights.resize(nw);
    for (auto& w : params.config.detour_weights) w = get_f32(is);
    const std::uint32_t nt = get_u32(is);
    if (!is || nt > 1u << 20) throw IoError("checkpoint: corrupt tensor count");
    params.tensors.reserve(nt);
    for (std::uint32_t i = 0; i < nt; ++i) {
        const std::uint32_t rank = get_u32(is);
        if (!is || rank > 8) throw IoError("checkpoint: corrupt tensor rank");
        ad::Shape shape(rank);
        for (auto& d : shape) d = static_cast<int>(get_u32(is));
        ad::TensorData t(shape);
        for (auto& v : t.data) v = ad::Real(get_f32(is));
        if (!is) throw IoError("checkpoint: truncated tensor payload");
        params.tensors.push_back(std::move(t));
    }
    params.config.validate();
    return params;
}

}  // namespace iflow
