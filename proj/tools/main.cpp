#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "iflow/config.hpp"
#include "iflow/flow_io.hpp"
#include "iflow/gradcheck.hpp"
#include "iflow/metrics.hpp"
#include "iflow/model.hpp"
#include "iflow/synth.hpp"
#include "iflow/train.hpp"

namespace fs = std::filesystem;
using namespace iflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

struct CommonOpts {
    std::string config_path;
    std::string out;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    int threads = 1;
};

Settings resolve_settings(const CommonOpts& opts) {
    Settings s;
    if (!opts.config_path.empty()) s = load_settings(opts.config_path);
    apply_overrides(s, opts.overrides);
    if (opts.seed) {
        s.model.seed = *opts.seed;
        s.train.seed = *opts.seed;
        s.synth.seed = *opts.seed;
    }
    s.finalize();
    return s;
}

void write_resolved(const Settings& s, const fs::path& where) {
    std::ofstream os(where);
    if (!os) throw IoError("cannot write resolved config: " + where.string());
    os << s.resolved();
}

std::vector<Sample> load_manifest_samples(const std::string& manifest) {
    return load_dataset(read_manifest(manifest));
}

int run_synth(const CommonOpts& opts) {
    Settings s = resolve_settings(opts);
    if (opts.out.empty()) throw ConfigError("synth: --out is required");
    std::vector<SynthSample> samples;
    if (s.synth_kind == "kanizsa") {
        samples.push_back(
            gen_kanizsa(s.kanizsa, s.kanizsa_inner_u, s.kanizsa_inner_v, s.kanizsa_bg_u,
                        s.kanizsa_bg_v));
    } else {
        samples = gen_moving_shapes(s.synth);
    }
    write_dataset(samples, opts.out);
    write_resolved(s, fs::path(opts.out) / "resolved.cfg");
    std::cout << "wrote " << samples.size() << " sample(s) to " << opts.out << "\n";
    return kExitOk;
}

int run_train(const CommonOpts& opts, const std::string& ckpt_path, bool finetune_mode,
              const std::string& train_manifest, const std::string& val_manifest) {
    Settings s = resolve_settings(opts);
    if (opts.out.empty()) throw ConfigError("train: --out is required");
    if (!train_manifest.empty()) s.train.train_manifest = train_manifest;
    if (!val_manifest.empty()) s.train.val_manifest = val_manifest;
    if (s.train.train_manifest.empty())
        throw ConfigError("train: no training manifest (positional arg or data.train)");
    if (finetune_mode && !s.lr_explicit) s.train.lr = 5e-6;
    s.finalize();

    const auto train_set = load_manifest_samples(s.train.train_manifest);
    std::vector<Sample> val_set;
    if (!s.train.val_manifest.empty()) val_set = load_manifest_samples(s.train.val_manifest);

    fs::create_directories(opts.out);
    write_resolved(s, fs::path(opts.out) / "resolved.cfg");
    std::ofstream csv(fs::path(opts.out) / "loss.csv");
    if (!csv) throw IoError("cannot write loss.csv in " + opts.out);
    write_loss_csv_header(csv, s.model.num_layers);

    TrainResult result;
    if (finetune_mode) {
        if (ckpt_path.empty()) throw ConfigError("finetune: --ckpt is required");
        const Checkpoint base = load_checkpoint(ckpt_path);
        result = finetune(base, s.train, train_set, val_set, &csv);
    } else if (!ckpt_path.empty()) {
        const Checkpoint resume = load_checkpoint(ckpt_path);
        result = train(s.train, train_set, val_set, &csv, &resume);
    } else {
        result = train(s.train, train_set, val_set, &csv);
    }

    save_checkpoint(result.checkpoint, (fs::path(opts.out) / "checkpoint.iflw").string());
    save_checkpoint(result.last, (fs::path(opts.out) / "checkpoint_last.iflw").string());
    std::cout << "steps: " << result.steps_run << "  best val EPE: "
              << result.checkpoint.best_val_epe << " (step " << result.checkpoint.best_step
              << ")  final lr: " << result.final_lr << "\n";
    return kExitOk;
}

int run_infer(const CommonOpts& opts, const std::string& ckpt_path, const std::string& fwd_path,
              const std::string& bwd_path, const std::string& edges_path,
              const std::string& sparse_path, const std::string& mask_path, int width, int height,
              bool viz) {
    Settings s = resolve_settings(opts);
    if (opts.out.empty()) throw ConfigError("infer: --out is required");
    if (ckpt_path.empty()) throw ConfigError("infer: --ckpt is required");

    FlowField sparse;
    MissingMask mask;
    if (!sparse_path.empty()) {
        sparse = read_flo(sparse_path);
        if (mask_path.empty()) throw ConfigError("infer: --mask is required with --sparse");
        mask = read_mask_pgm(mask_path);
        if (mask.width != sparse.width || mask.height != sparse.height)
            throw ConfigError("infer: mask extent does not match sparse flow");
    } else if (!fwd_path.empty()) {
        if (width <= 0 || height <= 0)
            throw ConfigError("infer: --width and --height are required with --fwd");
        const MatchList fwd = read_matches(fwd_path);
        std::tie(sparse, mask) = matches_to_sparse_flow(fwd, width, height);
        if (!bwd_path.empty()) {
            const MatchList bwd_matches = read_matches(bwd_path);
            // backward matches map I' -> I; invert by scattering
            auto [bwd, bwd_mask] = matches_to_sparse_flow(bwd_matches, width, height);
            std::tie(sparse, mask) = bidi_average(sparse, mask, bwd, bwd_mask);
        }
    } else {
        throw ConfigError("infer: provide --fwd matches or --sparse/--mask");
    }

    EdgeMap edges;
    if (!edges_path.empty()) {
        edges = read_edge_map(edges_path);
        if (edges.width != sparse.width || edges.height != sparse.height)
            throw ConfigError("infer: edge map extent does not match input");
    } else {
        edges = EdgeMap(sparse.width, sparse.height, 0.f);
    }

    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    NetInput input = downsample_input(sparse, mask, edges);
    if (!s.train.use_edges) input = without_edges(input);
    const FlowField pred_grid = predict(ckpt.params, input);
    const FlowField full = upsample_flow(pred_grid, input.full_h, input.full_w);
    write_flo(full, opts.out);
    write_resolved(s, fs::path(opts.out + ".cfg"));
    if (viz) {
        const fs::path ppm = fs::path(opts.out).replace_extension(".ppm");
        write_ppm(flow_to_color(full), ppm.string());
    }
    std::cout << "wrote " << opts.out << " (" << full.width << "x" << full.height << ")\n";
    return kExitOk;
}

struct EvalItem {
    std::string name;
    std::string gt, pred, pred2, occ;
    std::string in_flow, in_mask;  // optional, for pixel groups
};

std::string sample_stem(const fs::path& gt_path) {
    std::string stem = gt_path.stem().string();
    if (stem.size() > 3 && stem.ends_with("_gt")) stem.resize(stem.size() - 3);
    return stem;
}

EvalRow eval_one(const EvalItem& item) {
    const FlowField gt = read_flo(item.gt);
    const FlowField pred = read_flo(item.pred);
    if (pred.width != gt.width || pred.height != gt.height)
        throw IoError("eval: prediction extent mismatch for " + item.name);

    EvalRow row;
    row.name = item.name;
    row.pixels = std::int64_t(gt.size());
    const auto err = epe_image(pred, gt);
    row.epe = mean_epe(pred, gt);
    row.pct_out = percent_out(pred, gt);

    std::optional<MissingMask> occ;
    if (!item.occ.empty()) occ = read_mask_pgm(item.occ);

    std::optional<PixelGroups> groups;
    std::optional<MissingMask> in_mask;
    if (!item.in_flow.empty()) {
        const FlowField in_flow = read_flo(item.in_flow);
        in_mask = read_mask_pgm(item.in_mask);
        groups = pixel_groups(in_flow, *in_mask, gt, occ ? &*occ : nullptr);
    } else if (occ) {
        PixelGroups g;
        g.occluded.assign(gt.size(), 0);
        for (std::size_t i = 0; i < gt.size(); ++i) g.occluded[i] = occ->missing[i];
        g.noisy.assign(gt.size(), 0);
        g.missing.assign(gt.size(), 0);
        groups = g;
    }

    if (groups) {
        auto region_mean = [&err](const PixelMask& m, double& out, std::int64_t& count) {
            double s = 0;
            std::int64_t n = 0;
            for (std::size_t i = 0; i < m.size(); ++i)
                if (m[i]) {
                    s += err[i];
                    ++n;
                }
            count = n;
            if (n) out = s / double(n);
        };
        region_mean(groups->noisy, row.epe_noisy, row.noisy_pixels);
        region_mean(groups->occluded, row.epe_occluded, row.occluded_pixels);
        region_mean(groups->missing, row.epe_missing, row.missing_pixels);
        PixelMask noc(gt.size(), 1);
        for (std::size_t i = 0; i < gt.size(); ++i)
            if (groups->occluded[i]) noc[i] = 0;
        row.noc_pixels = std::count(noc.begin(), noc.end(), std::uint8_t(1));
        if (row.noc_pixels) row.pct_out_noc = percent_out(pred, gt, 3.0, &noc);
    }

    if (!item.pred2.empty()) {
        const FlowField baseline = read_flo(item.pred2);
        if (baseline.width != gt.width || baseline.height != gt.height)
            throw IoError("eval: baseline extent mismatch for " + item.name);
        const auto err_base = epe_image(baseline, gt);
        const auto ii = improvement_index(err_base, err);  // positive: pred beats baseline
        if (in_mask) {
            double sm = 0, sn = 0;
            std::int64_t nm = 0, nn = 0;
            for (std::size_t i = 0; i < ii.size(); ++i) {
                if (in_mask->missing[i]) {
                    sm += ii[i];
                    ++nm;
                } else {
                    sn += ii[i];
                    ++nn;
                }
            }
            if (nm) row.ii_missing = sm / double(nm);
            if (nn) row.ii_non_missing = sn / double(nn);
            row.missing_pixels = nm;  // weight for aggregation when groups absent
        } else {
            double s = 0;
            for (double x : ii) s += x;
            row.ii_non_missing = s / double(ii.size());
        }
    }
    return row;
}

int run_eval(const CommonOpts& opts, const std::string& pred_dir, const std::string& gt_arg,
             const std::string& occ_dir, const std::string& pred2_dir) {
    Settings s = resolve_settings(opts);
    if (opts.out.empty()) throw ConfigError("eval: --out is required");
    if (pred_dir.empty() || gt_arg.empty())
        throw ConfigError("eval: --pred and --gt are required");

    std::vector<EvalItem> items;
    if (fs::is_directory(gt_arg)) {
        std::vector<fs::path> flos;
        for (const auto& e : fs::directory_iterator(gt_arg))
            if (e.path().extension() == ".flo") flos.push_back(e.path());
        std::sort(flos.begin(), flos.end());
        for (const auto& gt : flos) {
            EvalItem item;
            item.name = gt.stem().string();
            item.gt = gt.string();
            item.pred = (fs::path(pred_dir) / gt.filename()).string();
            if (!pred2_dir.empty()) item.pred2 = (fs::path(pred2_dir) / gt.filename()).string();
            if (!occ_dir.empty())
                item.occ = (fs::path(occ_dir) / gt.stem()).string() + ".pgm";
            items.push_back(std::move(item));
        }
        if (items.empty()) throw IoError("eval: no .flo files in " + gt_arg);
    } else {
        for (const auto& p : read_manifest(gt_arg)) {
            EvalItem item;
            item.name = sample_stem(p.gt);
            item.gt = p.gt;
            item.in_flow = p.sparse;
            item.in_mask = p.mask;
            item.pred = (fs::path(pred_dir) / (item.name + ".flo")).string();
            if (!pred2_dir.empty())
                item.pred2 = (fs::path(pred2_dir) / (item.name + ".flo")).string();
            if (!occ_dir.empty())
                item.occ = (fs::path(occ_dir) / (item.name + ".pgm")).string();
            items.push_back(std::move(item));
        }
    }

    std::vector<EvalRow> rows(items.size());
    const int nthreads = std::max(1, opts.threads);
    std::vector<std::string> errors;
    errors.resize(std::size_t(nthreads));
    {
        std::vector<std::thread> pool;
        for (int t = 0; t < nthreads; ++t) {
            pool.emplace_back([&, t]() {
                try {
                    for (std::size_t i = std::size_t(t); i < items.size();
                         i += std::size_t(nthreads))
                        rows[i] = eval_one(items[i]);
                } catch (const std::exception& e) {
                    errors[std::size_t(t)] = e.what();
                }
            });
        }
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors)
        if (!e.empty()) throw IoError(e);

    const EvalReport report = aggregate_rows(std::move(rows));
    fs::create_directories(opts.out);
    std::ofstream csv(fs::path(opts.out) / "eval.csv");
    if (!csv) throw IoError("cannot write eval.csv in " + opts.out);
    csv << report.to_csv();
    write_resolved(s, fs::path(opts.out) / "resolved.cfg");

    const auto& a = report.aggregate;
    std::cout << "images: " << report.per_image.size() << "  pixels: " << a.pixels << "\n";
    std::cout << "mean EPE: " << a.epe << "   %out(>3): " << a.pct_out << "\n";
    if (a.missing_pixels)
        std::cout << "EPE missing: " << a.epe_missing << " (" << a.missing_pixels << " px)\n";
    if (a.occluded_pixels)
        std::cout << "EPE occluded: " << a.epe_occluded << " (" << a.occluded_pixels << " px)\n";
    if (a.noisy_pixels)
        std::cout << "EPE noisy: " << a.epe_noisy << " (" << a.noisy_pixels << " px)\n";
    if (a.ii_missing) std::cout << "II missing: " << *a.ii_missing << "\n";
    if (a.ii_non_missing) std::cout << "II non-missing: " << *a.ii_non_missing << "\n";
    return kExitOk;
}

int run_gradcheck(std::uint64_t seed, bool corrupt) {
    ad::testing::corrupt_elu_backward = corrupt;
    const GradCheckReport report = run_gradient_suite(seed);
    ad::testing::corrupt_elu_backward = false;
    std::cout << "gradient check  (central differences, eps=" << report.epsilon
              << ", tol=" << report.tolerance
              << ", rel err = |a-fd|/max(1,|a|,|fd|))\n";
    for (const auto& e : report.entries) {
        std::printf("  %-14s max rel err %.3e  %s\n", e.name.c_str(), e.max_rel_err,
                    e.pass ? "ok" : "FAIL");
    }
    if (!report.all_pass()) {
        std::cout << "FAIL (worst " << report.worst() << ")\n";
        return kExitNumeric;
    }
    std::cout << "PASS (worst " << report.worst() << ")\n";
    return kExitOk;
}

int run_viz(const std::string& input, const std::string& out, double max_mag) {
    if (out.empty()) throw ConfigError("viz: --out is required");
    const FlowField flow = read_flo(input);
    std::optional<float> mm;
    if (max_mag > 0) mm = float(max_mag);
    write_ppm(flow_to_color(flow, mm), out);
    std::cout << "wrote " << out << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse-to-dense optical flow interpolation"};
    app.require_subcommand(1);

    CommonOpts common;
    std::string ckpt_path, fwd_path, bwd_path, edges_path, sparse_path, mask_path;
    std::string train_manifest, val_manifest;
    std::string pred_dir, gt_arg, occ_dir, pred2_dir;
    std::string viz_in, viz_out;
    int width = 0, height = 0;
    bool viz_flag = false, corrupt = false;
    double max_mag = 0.0;
    std::uint64_t gradcheck_seed = 1;

    auto add_common = [&](CLI::App* cmd, bool with_out = true) {
        cmd->add_option("--config", common.config_path, "key = value configuration file");
        cmd->add_option("--set", common.overrides, "override a config key (key=value)");
        cmd->add_option("--seed", common.seed, "override every seed field");
        cmd->add_option("--threads", common.threads, "worker threads where supported");
        if (with_out) cmd->add_option("--out", common.out, "output path");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth);

    CLI::App* train_cmd = app.add_subcommand("train", "train from scratch (or resume with --ckpt)");
    add_common(train_cmd);
    train_cmd->add_option("train_manifest", train_manifest, "training manifest");
    train_cmd->add_option("val_manifest", val_manifest, "validation manifest");
    train_cmd->add_option("--ckpt", ckpt_path, "resume from this checkpoint");

    CLI::App* finetune_cmd = app.add_subcommand("finetune", "fine-tune from a checkpoint");
    add_common(finetune_cmd);
    finetune_cmd->add_option("train_manifest", train_manifest, "training manifest");
    finetune_cmd->add_option("val_manifest", val_manifest, "validation manifest");
    finetune_cmd->add_option("--ckpt", ckpt_path, "base checkpoint")->required();

    CLI::App* infer = app.add_subcommand("infer", "densify one sparse flow input");
    add_common(infer);
    infer->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
    infer->add_option("--fwd", fwd_path, "forward match list (text)");
    infer->add_option("--bwd", bwd_path, "backward match list for bidirectional averaging");
    infer->add_option("--edges", edges_path, "edge map (PGM or raw)");
    infer->add_option("--sparse", sparse_path, "sparse flow .flo (alternative to --fwd)");
    infer->add_option("--mask", mask_path, "missing mask PGM (with --sparse)");
    infer->add_option("--width", width, "image width (with --fwd)");
    infer->add_option("--height", height, "image height (with --fwd)");
    infer->add_flag("--viz", viz_flag, "also write a color rendering");

    CLI::App* eval = app.add_subcommand("eval", "evaluate predictions against ground truth");
    add_common(eval);
    eval->add_option("--pred", pred_dir, "directory of predicted .flo files")->required();
    eval->add_option("--gt", gt_arg, "ground-truth directory or dataset manifest")->required();
    eval->add_option("--occ", occ_dir, "directory of occlusion masks (PGM)");
    eval->add_option("--pred2", pred2_dir, "baseline predictions for improvement-index mode");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gradcheck->add_option("--seed", gradcheck_seed, "suite seed");
    gradcheck->add_flag("--corrupt-elu", corrupt, "test hook: break one backward rule")
        ->group("");  // hidden

    CLI::App* viz = app.add_subcommand("viz", "render a .flo as a color image");
    viz->add_option("input", viz_in, "input .flo")->required();
    viz->add_option("--out", viz_out, "output PPM path")->required();
    viz->add_option("--max-mag", max_mag, "saturation magnitude (default: field max)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (synth->parsed()) return run_synth(common);
        if (train_cmd->parsed())
            return run_train(common, ckpt_path, false, train_manifest, val_manifest);
        if (finetune_cmd->parsed())
            return run_train(common, ckpt_path, true, train_manifest, val_manifest);
        if (infer->parsed())
            return run_infer(common, ckpt_path, fwd_path, bwd_path, edges_path, sparse_path,
                             mask_path, width, height, viz_flag);
        if (eval->parsed()) return run_eval(common, pred_dir, gt_arg, occ_dir, pred2_dir);
        if (gradcheck->parsed()) return run_gradcheck(gradcheck_seed, corrupt);
        if (viz->parsed()) return run_viz(viz_in, viz_out, max_mag);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitConfig;
}
