#include "iflow/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>

#include "iflow/detail/binio.hpp"
#include "iflow/flow_io.hpp"

namespace iflow {

void TrainConfig::validate() const {
    model.validate();
    if (lr < 0.0) throw ConfigError("train: lr must be >= 0");
    if (rounds < 1) throw ConfigError("train: rounds must be >= 1");
    if (val_interval < 1) throw ConfigError("train: val_interval must be >= 1");
    if (patience < val_interval)
        throw ConfigError("train: patience must be >= val_interval");
    if (flip_prob < 0.0 || flip_prob > 1.0)
        throw ConfigError("train: flip_prob must be in [0, 1]");
    if (improve_tol < 0.0) throw ConfigError("train: improve_tol must be >= 0");
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdull;
    x ^= x >> 33;
    return x;
}

// Stateless per-epoch permutation: the same (seed, epoch) always yields
// the same order, so resuming at any step is exact.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::int64_t epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix(seed, std::uint64_t(epoch) + 1));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    return order;
}

bool flip_draw(std::uint64_t seed, std::int64_t step, double flip_prob) {
    std::mt19937_64 rng(mix(seed ^ 0xf11bull, std::uint64_t(step)));
    const double u = double(rng() >> 11) * (1.0 / 9007199254740992.0);
    return u < flip_prob;
}

double validate_or_inf(const ModelParams& params, const std::vector<Sample>& val_set,
                       bool use_edges) {
    if (val_set.empty()) return std::numeric_limits<double>::infinity();
    return evaluate_mean_epe(params, val_set, use_edges);
}

}  // namespace

double evaluate_mean_epe(const ModelParams& params, const std::vector<Sample>& set,
                         bool use_edges) {
    double err_sum = 0.0;
    std::int64_t pixels = 0;
    for (const Sample& s : set) {
        const FlowField pred =
            use_edges ? predict(params, s.input) : predict(params, without_edges(s.input));
        for (std::size_t i = 0; i < pred.size(); ++i)
            err_sum += std::hypot(double(pred.u[i]) - double(s.gt.u[i]),
                                  double(pred.v[i]) - double(s.gt.v[i]));
        pixels += std::int64_t(pred.size());
    }
    return err_sum / double(pixels);
}

void write_loss_csv_header(std::ostream& os, int num_layers) {
    os << "step,lr,L_net";
    for (int l = 1; l <= num_layers; ++l) os << ",L_epe_" << l;
    for (int l = 1; l <= num_layers; ++l) os << ",L_ld_" << l;
    os << '\n';
}

TrainResult train(const TrainConfig& config, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, std::ostream* loss_csv,
                  const Checkpoint* resume) {
    config.validate();
    if (train_set.empty()) throw ConfigError("train: empty training set");

    Checkpoint state;
    if (resume) {
        if (!(resume->params.config == config.model))
            throw ConfigError("train: checkpoint model configuration does not match");
        state = *resume;
    } else {
        state.params = init_params(config.model, config.model.seed);
        state.best_params = state.params;
        state.adam.lr = config.lr;
    }
    state.has_train_state = true;

    const std::vector<float> weights = config.model.effective_detour_weights();
    TrainResult result;
    if (loss_csv) loss_csv->precision(9);

    const std::size_t n_train = train_set.size();
    bool stop = false;
    while (!stop) {
        if (config.max_steps >= 0 && state.step >= config.max_steps) break;
        const std::int64_t step = state.step;  // 0-based draw index; reported 1-based
        const std::int64_t epoch = step / std::int64_t(n_train);
        const auto order = epoch_order(config.seed, epoch, n_train);
        const Sample* sample = &train_set[order[std::size_t(step % std::int64_t(n_train))]];
        Sample flipped;
        if (flip_draw(config.seed, step, config.flip_prob)) {
            flipped = flip_horizontal(*sample);
            sample = &flipped;
        }
        Sample stripped;
        if (!config.use_edges) {
            stripped = *sample;
            stripped.input = without_edges(stripped.input);
            sample = &stripped;
        }

        ad::Tape tape;
        ForwardPass pass = forward(tape, state.params, sample->input);
        ad::Var gt = flow_leaf(tape, sample->gt);
        NetLossOptions opts;
        opts.weights = weights;
        opts.use_ld = config.use_ld;
        auto [total, report] = net_loss(pass.detours, gt, opts);
        if (!std::isfinite(report.total))
            throw NumericError("train: non-finite loss at step " + std::to_string(step + 1) +
                               " (sample " + sample->id + ")");
        tape.backward(total);

        std::vector<ad::TensorData*> params;
        std::vector<std::span<const ad::Real>> grads;
        params.reserve(state.params.tensors.size());
        for (std::size_t i = 0; i < state.params.tensors.size(); ++i) {
            params.push_back(&state.params.tensors[i]);
            grads.push_back(pass.param_leaves[i].grad());
        }
        ad::adam_step(params, grads, state.adam);
        state.step += 1;

        if (loss_csv) {
            std::ostream& os = *loss_csv;
            os << state.step << ',' << state.adam.lr << ',' << report.total;
            for (double e : report.epe_per_layer) os << ',' << e;
            for (double l : report.ld_per_layer) os << ',' << l;
            os << '\n';
        }

        if (!val_set.empty() && state.step % config.val_interval == 0) {
            const double val_epe = evaluate_mean_epe(state.params, val_set, config.use_edges);
            result.val_history.push_back(val_epe);
            const double prev_best = state.best_val_epe;
            if (val_epe < prev_best) {  // exact best tracking
                state.best_val_epe = val_epe;
                state.best_step = state.step;
                state.best_params = state.params;
            }
            // patience only resets on improvements beyond the jitter tolerance
            if (val_epe < prev_best - config.improve_tol) {
                state.last_improve_step = state.step;
            } else if (state.step - state.last_improve_step >= config.patience) {
                // round boundary: halve the rate, fall back to the best weights
                state.rounds_done += 1;
                state.adam.lr *= 0.5;
                state.params = state.best_params;
                state.last_improve_step = state.step;
                if (state.rounds_done >= config.rounds) stop = true;
            }
        }
    }

    // Make "best" well defined even for runs capped before any validation.
    if (std::isinf(state.best_val_epe)) {
        state.best_val_epe = validate_or_inf(state.params, val_set, config.use_edges);
        state.best_step = state.step;
        state.best_params = state.params;
        if (!val_set.empty() && !std::isinf(state.best_val_epe))
            result.val_history.push_back(state.best_val_epe);
    }

    result.final_lr = state.adam.lr;
    result.steps_run = state.step;
    result.last = state;
    Checkpoint best = std::move(state);
    best.params = best.best_params;
    result.checkpoint = std::move(best);
    return result;
}

TrainResult finetune(const Checkpoint& base, const TrainConfig& config,
                     const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                     std::ostream* loss_csv) {
    if (!(base.params.config == config.model))
        throw ConfigError("finetune: checkpoint model configuration does not match");
    Checkpoint start;
    start.params = base.params;
    start.best_params = base.params;
    if (config.fresh_adam) {
        start.adam = ad::AdamState{};
    } else {
        start.adam = base.adam;
    }
    start.adam.lr = config.lr;
    return train(config, train_set, val_set, loss_csv, &start);
}

// --- checkpoint serialization ------------------------------------------------

namespace {

void write_moment_list(std::ostream& os, const std::vector<std::vector<ad::Real>>& list) {
    detail::put_u32(os, static_cast<std::uint32_t>(list.size()));
    for (const auto& buf : list) {
        detail::put_u32(os, static_cast<std::uint32_t>(buf.size()));
        for (ad::Real v : buf) detail::put_f32(os, float(v));
    }
}

std::vector<std::vector<ad::Real>> read_moment_list(std::istream& is) {
    const std::uint32_t n = detail::get_u32(is);
    if (!is || n > 1u << 20) throw IoError("checkpoint: corrupt moment list");
    std::vector<std::vector<ad::Real>> list(n);
    for (auto& buf : list) {
        const std::uint32_t len = detail::get_u32(is);
        if (!is || len > 1u << 28) throw IoError("checkpoint: corrupt moment buffer");
        buf.resize(len);
        for (auto& v : buf) v = ad::Real(detail::get_f32(is));
    }
    if (!is) throw IoError("checkpoint: truncated moment payload");
    return list;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    write_params(os, ckpt.params);
    detail::put_u32(os, ckpt.has_train_state ? 1u : 0u);
    if (ckpt.has_train_state) {
        detail::put_f64(os, ckpt.adam.lr);
        detail::put_f64(os, ckpt.adam.beta1);
        detail::put_f64(os, ckpt.adam.beta2);
        detail::put_f64(os, ckpt.adam.eps);
        detail::put_u64(os, std::uint64_t(ckpt.adam.t));
        write_moment_list(os, ckpt.adam.m);
        write_moment_list(os, ckpt.adam.v);
        detail::put_u64(os, std::uint64_t(ckpt.step));
        detail::put_u32(os, std::uint32_t(ckpt.rounds_done));
        detail::put_u64(os, std::uint64_t(ckpt.last_improve_step));
        detail::put_f64(os, ckpt.best_val_epe);
        detail::put_u64(os, std::uint64_t(ckpt.best_step));
        write_params(os, ckpt.best_params);
    }
    if (!os) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    Checkpoint ckpt;
    ckpt.params = read_params(is);
    const std::uint32_t flags = detail::get_u32(is);
    if (!is) throw IoError("checkpoint: truncated: " + path);
    ckpt.has_train_state = (flags & 1u) != 0;
    if (ckpt.has_train_state) {
        ckpt.adam.lr = detail::get_f64(is);
        ckpt.adam.beta1 = detail::get_f64(is);
        ckpt.adam.beta2 = detail::get_f64(is);
        ckpt.adam.eps = detail::get_f64(is);
        ckpt.adam.t = std::int64_t(detail::get_u64(is));
        ckpt.adam.m = read_moment_list(is);
        ckpt.adam.v = read_moment_list(is);
        ckpt.step = std::int64_t(detail::get_u64(is));
        ckpt.rounds_done = int(detail::get_u32(is));
        ckpt.last_improve_step = std::int64_t(detail::get_u64(is));
        ckpt.best_val_epe = detail::get_f64(is);
        ckpt.best_step = std::int64_t(detail::get_u64(is));
        ckpt.best_params = read_params(is);
        if (!is) throw IoError("checkpoint: truncated training state: " + path);
    } else {
        ckpt.best_params = ckpt.params;
    }
    return ckpt;
}

// --- dataset loading -----------------------------------------------------------

Sample make_sample(const FlowField& sparse, const MissingMask& mask, const EdgeMap& edges,
                   const FlowField& gt_full, std::string id) {
    Sample s;
    s.input = downsample_input(sparse, mask, edges);
    s.gt = downsample_gt(gt_full);
    s.id = std::move(id);
    if (s.gt.width != s.input.grid_w || s.gt.height != s.input.grid_h)
        throw std::invalid_argument("make_sample: input/ground-truth extent mismatch");
    return s;
}

Sample make_sample(const SynthSample& synth) {
    return make_sample(synth.sparse, synth.mask, synth.edges, synth.gt, synth.id);
}

std::vector<Sample> load_dataset(const std::vector<DatasetPaths>& paths) {
    std::vector<Sample> samples;
    samples.reserve(paths.size());
    for (const auto& p : paths) {
        const FlowField gt = read_flo(p.gt);
        const FlowField sparse = read_flo(p.sparse);
        const MissingMask mask = read_mask_pgm(p.mask);
        const EdgeMap edges = read_edge_map(p.edges);
        samples.push_back(make_sample(sparse, mask, edges, gt,
                                      std::filesystem::path(p.gt).stem().string()));
    }
    return samples;
}

}  // namespace iflow
