#pragma once

#include <string>
#include <vector>

#include "iflow/synth.hpp"
#include "iflow/train.hpp"

namespace iflow {

// Flat key = value configuration shared by every subcommand. Unknown keys
// are an error. Command-line flags override file values; the fully
// resolved set is written next to each run's outputs.
struct Settings {
    ModelConfig model;
    TrainConfig train;
    SynthSpec synth;
    // kanizsa generation (synth.kind = kanizsa)
    std::string synth_kind = "shapes";
    KanizsaGeometry kanizsa;
    float kanizsa_inner_u = 4.f, kanizsa_inner_v = 0.f;
    float kanizsa_bg_u = -4.f, kanizsa_bg_v = 0.f;

    bool lr_explicit = false;  // whether train.lr came from user input

    void apply(const std::string& key, const std::string& value);  // ConfigError on unknown key
    std::string resolved() const;  // canonical key = value dump
    void finalize();               // cross-field fixups + validation
};

Settings load_settings(const std::string& path);                      // config file
void apply_overrides(Settings& s, const std::vector<std::string>& kv);  // "key=value" strings

}  // namespace iflow
