#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "iflow/losses.hpp"
#include "iflow/model.hpp"
#include "iflow/preprocess.hpp"
#include "iflow/synth.hpp"

namespace iflow {

struct TrainConfig {
    double lr = 5e-5;                // fine-tuning default is 5e-6
    std::int64_t patience = 1000;    // steps without improvement per round
    int rounds = 4;
    std::int64_t val_interval = 100;
    std::int64_t max_steps = -1;     // < 0: run until the rounds are exhausted
    std::uint64_t seed = 1;
    double flip_prob = 0.5;
    double improve_tol = 1e-4;       // required validation EPE decrease
    bool fresh_adam = true;          // fine-tune: reset moments vs carry them
    bool use_ld = true;
    bool use_edges = true;
    ModelConfig model;
    std::string train_manifest;      // CLI wiring; the library API takes Samples
    std::string val_manifest;

    void validate() const;
};

struct Checkpoint {
    ModelParams params;          // current weights (for a finished run: the best)
    ad::AdamState adam;
    bool has_train_state = false;
    std::int64_t step = 0;
    int rounds_done = 0;
    std::int64_t last_improve_step = 0;
    double best_val_epe = std::numeric_limits<double>::infinity();
    std::int64_t best_step = 0;
    ModelParams best_params;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct TrainResult {
    Checkpoint checkpoint;             // best-on-validation weights
    Checkpoint last;                   // state at the final step, for resuming
    std::vector<double> val_history;   // every recorded validation EPE
    double final_lr = 0.0;
    std::int64_t steps_run = 0;
};

// The loop: batch size 1 over a per-epoch shuffle, each draw flipped with
// probability flip_prob, Adam update per step, validation every
// val_interval steps on the last detour at the /8 grid. A round ends when
// validation has not improved by improve_tol for `patience` steps; the
// learning rate halves, the best weights are restored, and after `rounds`
// rounds the globally best weights are returned. Sampling and flip draws
// are derived statelessly from (seed, step), so a resumed run reproduces
// the interrupted trajectory exactly.
TrainResult train(const TrainConfig& config, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, std::ostream* loss_csv = nullptr,
                  const Checkpoint* resume = nullptr);

// Same loop started from an existing checkpoint's weights, with either a
// fresh optimizer state (default) or the checkpoint's own moments.
TrainResult finetune(const Checkpoint& base, const TrainConfig& config,
                     const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                     std::ostream* loss_csv = nullptr);

// Mean endpoint error of the last detour over a sample set (grid units,
// pixel-weighted); the quantity validation tracks.
double evaluate_mean_epe(const ModelParams& params, const std::vector<Sample>& set,
                         bool use_edges = true);

void write_loss_csv_header(std::ostream& os, int num_layers);

// Builds a /8 training sample from full-resolution inputs.
Sample make_sample(const FlowField& sparse, const MissingMask& mask, const EdgeMap& edges,
                   const FlowField& gt_full, std::string id);
Sample make_sample(const SynthSample& synth);
std::vector<Sample> load_dataset(const std::vector<DatasetPaths>& paths);

}  // namespace iflow
