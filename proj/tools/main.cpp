// Copyright (c) 2026 The xattn Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xattn/attention.hpp"
#include "xattn/block_mask.hpp"
#include "xattn/calibrate.hpp"
#include "xattn/metrics.hpp"
#include "xattn/scoring.hpp"
#include "xattn/selection.hpp"
#include "xattn/sparse.hpp"
#include "xattn/tensor.hpp"
#include "xattn/workload_io.hpp"
#include "xattn/workloads.hpp"

namespace {

using namespace xattn;
namespace fs = std::filesystem;

struct RunConfig {
    SelectionConfig sel;  // defaults: B=128, S=8, tau=0.9
    std::size_t threads = 1;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool causal_set = false;
    bool no_oracle = false;
    std::size_t reps = 5;
    std::size_t budget = 8;
    double epsilon = 0.01;
    double t_init = 0.0;  // 0 follows tau
    std::string out;
};

// "NAME" or "NAME:PARAM"; the parameter sets tau, top_k, or top_ratio.
void apply_strategy(SelectionConfig& sel, const std::string& text) {
    const auto colon = text.find(':');
    const std::string name = text.substr(0, colon);
    sel.strategy = parse_strategy(name);
    if (colon == std::string::npos) {
        return;
    }
    const std::string param = text.substr(colon + 1);
    try {
        switch (sel.strategy) {
            case Strategy::kThreshold: sel.tau = std::stod(param); break;
            case Strategy::kTopK: sel.top_k = std::stoull(param); break;
            case Strategy::kTopRatio: sel.top_ratio = std::stod(param); break;
        }
    } catch (const std::exception&) {
        throw ConfigError("bad strategy parameter: " + param);
    }
}

void apply_config_json(RunConfig& rc, const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config: " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad JSON in ") + path + ": " + e.what());
    }
    try {
        if (j.contains("block_size")) rc.sel.block_size = j.at("block_size").get<std::size_t>();
        if (j.contains("stride")) rc.sel.stride = j.at("stride").get<std::size_t>();
        if (j.contains("tau")) rc.sel.tau = j.at("tau").get<double>();
        if (j.contains("pattern")) rc.sel.pattern = parse_pattern(j.at("pattern").get<std::string>());
        if (j.contains("strategy")) apply_strategy(rc.sel, j.at("strategy").get<std::string>());
        if (j.contains("top_k")) rc.sel.top_k = j.at("top_k").get<std::size_t>();
        if (j.contains("top_ratio")) rc.sel.top_ratio = j.at("top_ratio").get<double>();
        if (j.contains("causal")) {
            rc.sel.causal = j.at("causal").get<bool>();
            rc.causal_set = true;
        }
        if (j.contains("force_diag")) rc.sel.force_diagonal_block = j.at("force_diag").get<bool>();
        if (j.contains("force_first")) rc.sel.force_first_block = j.at("force_first").get<bool>();
        if (j.contains("threads")) rc.threads = j.at("threads").get<std::size_t>();
        if (j.contains("seed")) {
            rc.seed = j.at("seed").get<std::uint64_t>();
            rc.seed_set = true;
        }
        if (j.contains("reps")) rc.reps = j.at("reps").get<std::size_t>();
        if (j.contains("budget")) rc.budget = j.at("budget").get<std::size_t>();
        if (j.contains("epsilon")) rc.epsilon = j.at("epsilon").get<double>();
        if (j.contains("t_init")) rc.t_init = j.at("t_init").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config field: ") + e.what());
    }
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

// Atomic emission: a partial file never lands at `path`.
void write_file_atomically(const std::string& path, const std::string& content) {
    const fs::path target(path);
    if (target.has_parent_path()) {
        fs::create_directories(target.parent_path());
    }
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw FormatError("cannot write " + tmp.string());
        }
        out << content;
        out.flush();
        if (!out) {
            throw FormatError("short write to " + tmp.string());
        }
    }
    fs::rename(tmp, target);
}

LoadedWorkload load_and_align(const std::string& dir, RunConfig& rc) {
    LoadedWorkload lw = load_workload(dir);
    if (!rc.causal_set) {
        rc.sel.causal = lw.spec.causal;
    } else if (rc.sel.causal != lw.spec.causal) {
        throw ConfigError("causal flag disagrees with the stored workload");
    }
    rc.sel.pattern_seed = rc.seed;
    rc.sel.validate();
    return lw;
}

std::int64_t elapsed_ns(std::chrono::steady_clock::time_point from) {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now() - from)
        .count();
}

std::int64_t median_ns(std::vector<std::int64_t> samples) {
    std::sort(samples.begin(), samples.end());
    const std::size_t n = samples.size();
    if (n % 2 == 1) {
        return samples[n / 2];
    }
    return (samples[n / 2 - 1] + samples[n / 2]) / 2;
}

int cmd_gen_workload(const std::string& spec_path, const std::string& out_dir, RunConfig& rc) {
    WorkloadSpec spec = load_spec(spec_path);
    if (rc.seed_set) {
        spec.seed = rc.seed;
    }
    const auto heads = generate(spec);
    save_workload(out_dir, spec, heads);
    std::cout << "workload dir=" << out_dir << " kind=" << kind_name(spec.kind)
              << " L=" << spec.seq_len << " d_h=" << spec.head_dim << " heads=" << spec.heads
              << " seed=" << spec.seed << " causal=" << (spec.causal ? 1 : 0) << "\n";
    return 0;
}

int cmd_score(const std::string& dir, RunConfig& rc) {
    const LoadedWorkload lw = load_and_align(dir, rc);
    const std::string out_dir = rc.out.empty() ? (fs::path(dir) / "scores").string() : rc.out;
    fs::create_directories(out_dir);
    std::size_t files = 0;
    const std::size_t n_blocks = ceil_div(lw.spec.seq_len, rc.sel.block_size);
    for (std::size_t h = 0; h < lw.heads.size(); ++h) {
        for (std::size_t b = 0; b < n_blocks; ++b) {
            const TileScoreMap ts = tile_scores(lw.heads[h], rc.sel, b);
            const std::string stem =
                "head" + std::to_string(h) + "_block" + std::to_string(b);
            save_tensor(ts.raw, (fs::path(out_dir) / (stem + "_raw.xatn")).string());
            save_tensor(ts.prob, (fs::path(out_dir) / (stem + "_prob.xatn")).string());
            files += 2;
        }
    }
    std::cout << "scores dir=" << out_dir << " heads=" << lw.heads.size()
              << " blocks=" << n_blocks << " files=" << files << "\n";
    return 0;
}

int cmd_select(const std::string& dir, RunConfig& rc) {
    const LoadedWorkload lw = load_and_align(dir, rc);
    const std::string out_dir = rc.out.empty() ? (fs::path(dir) / "masks").string() : rc.out;
    fs::create_directories(out_dir);
    for (std::size_t h = 0; h < lw.heads.size(); ++h) {
        const BlockMask mask = build_mask(lw.heads[h], rc.sel, rc.threads);
        const std::string path =
            (fs::path(out_dir) / ("head" + std::to_string(h) + "_mask.xmsk")).string();
        save_mask(mask, path);
        std::cout << "head=" << h << " density=" << format_double(density(mask, rc.sel.causal))
                  << " file=" << path << "\n";
    }
    return 0;
}

int cmd_attend(const std::string& dir, RunConfig& rc) {
    const LoadedWorkload lw = load_and_align(dir, rc);
    const std::string out_dir = rc.out.empty() ? (fs::path(dir) / "outputs").string() : rc.out;
    fs::create_directories(out_dir);
    for (std::size_t h = 0; h < lw.heads.size(); ++h) {
        const BlockMask mask = build_mask(lw.heads[h], rc.sel, rc.threads);
        const Tensor sparse =
            sparse_attention(lw.heads[h], mask, rc.sel.block_size, rc.threads);
        const std::string path =
            (fs::path(out_dir) / ("head" + std::to_string(h) + "_out.xatn")).string();
        save_tensor(sparse, path);
        std::cout << "head=" << h
                  << " density=" << format_double(density(mask, rc.sel.causal));
        if (rc.no_oracle) {
            std::cout << " output_error=skipped";
        } else {
            const Tensor full =
                full_attention_streamed(lw.heads[h], rc.sel.block_size, rc.threads);
            std::cout << " output_error=" << format_double(output_error(sparse, full));
        }
        std::cout << " file=" << path << "\n";
    }
    return 0;
}

int cmd_ablate(const std::string& dir, RunConfig& rc) {
    const LoadedWorkload lw = load_and_align(dir, rc);
    const std::string out_path = rc.out.empty() ? (fs::path(dir) / "ablate.csv").string() : rc.out;
    const std::vector<Pattern> patterns = {Pattern::kAntidiagonal, Pattern::kDiagonal,
                                           Pattern::kRandom, Pattern::kFullSum};
    const std::vector<std::size_t> strides = {4, 8, 16, 64};
    const std::vector<Strategy> strategies = {Strategy::kThreshold, Strategy::kTopK,
                                              Strategy::kTopRatio};

    std::ostringstream csv;
    csv << "# s_selected=post-softmax tile probabilities summed per block\n";
    csv << "# s_full=post-softmax dense attention probabilities summed per block\n";
    csv << "# js_upper_bound=" << format_double(std::log(2.0)) << "\n";
    csv << "head,pattern,stride,strategy,rank_correlation,js_divergence,density,output_error\n";

    std::size_t rows = 0;
    for (std::size_t h = 0; h < lw.heads.size(); ++h) {
        const AttentionInputs& inp = lw.heads[h];
        const Tensor full = full_attention_streamed(inp, rc.sel.block_size, rc.threads);

        std::vector<SelectionConfig> configs;
        for (Pattern pattern : patterns) {
            for (std::size_t stride : strides) {
                SelectionConfig cfg = rc.sel;
                cfg.pattern = pattern;
                cfg.stride = stride;
                cfg.strategy = Strategy::kThreshold;
                cfg.validate();
                configs.push_back(cfg);
            }
        }
        const SimilarityReport report = pattern_similarity_report(inp, configs, rc.threads);

        const std::size_t n_blocks = ceil_div(inp.seq_len(), rc.sel.block_size);
        const double mean_valid =
            rc.sel.causal ? (static_cast<double>(n_blocks) + 1.0) / 2.0
                          : static_cast<double>(n_blocks);
        for (std::size_t c = 0; c < configs.size(); ++c) {
            const SimilarityRow& sim = report.rows[c];
            const double thr_density = sim.density_at_tau;
            for (Strategy strategy : strategies) {
                SelectionConfig cfg = configs[c];
                cfg.strategy = strategy;
                if (strategy == Strategy::kTopK) {
                    cfg.top_k = std::max<std::size_t>(
                        1, static_cast<std::size_t>(std::llround(thr_density * mean_valid)));
                } else if (strategy == Strategy::kTopRatio) {
                    cfg.top_ratio = std::min(1.0, std::max(thr_density, 1e-6));
                }
                const BlockMask mask = build_mask(inp, cfg, rc.threads);
                const Tensor sparse = sparse_attention(inp, mask, cfg.block_size, rc.threads);
                csv << h << ',' << pattern_name(cfg.pattern) << ',' << cfg.stride << ','
                    << strategy_name(strategy) << ',' << format_double(sim.rank_correlation)
                    << ',' << format_double(sim.js_divergence) << ','
                    << format_double(density(mask, cfg.causal)) << ','
                    << format_double(output_error(sparse, full)) << "\n";
                rows += 1;
            }
        }
    }
    write_file_atomically(out_path, csv.str());
    std::cout << "ablate out=" << out_path << " rows=" << rows << "\n";
    return 0;
}

int cmd_calibrate(const std::string& dir, RunConfig& rc) {
    const LoadedWorkload lw = load_and_align(dir, rc);
    const std::string out_path =
        rc.out.empty() ? (fs::path(dir) / "calibration.json").string() : rc.out;
    const CalibrationSet set = {lw.heads};
    const Evaluator evaluator = fidelity_evaluator(set, rc.sel, rc.threads);
    const double t_init = rc.t_init > 0.0 ? rc.t_init : rc.sel.tau;
    const CalibrationResult result =
        predict_min_thresholds(evaluator, lw.heads.size(), rc.budget, t_init, rc.epsilon);
    write_file_atomically(out_path, calibration_to_json(result).dump(2) + "\n");
    std::size_t steps = 0;
    for (std::size_t s : result.thresholds.step_counts) steps += s;
    std::cout << "calibrated heads=" << lw.heads.size() << " steps=" << steps
              << " baseline_perf=" << format_double(result.baseline_perf)
              << " final_perf=" << format_double(result.final_perf) << " out=" << out_path
              << "\n";
    return 0;
}

int cmd_bench(const std::string& dir, RunConfig& rc) {
    const LoadedWorkload lw = load_and_align(dir, rc);
    const std::string out_path = rc.out.empty() ? (fs::path(dir) / "bench.csv").string() : rc.out;
    const std::size_t reps = std::max<std::size_t>(rc.reps, 5);

    std::ostringstream csv;
    csv << "# threads=" << rc.threads << "\n";
    csv << "L,B,S,tau,pattern,strategy,head,density,select_time_ns,attend_time_ns,"
           "full_time_ns,speedup,output_error,seed\n";

    for (std::size_t h = 0; h < lw.heads.size(); ++h) {
        const AttentionInputs& inp = lw.heads[h];

        // Warm pass, untimed; also provides the dense oracle output.
        BlockMask mask = build_mask(inp, rc.sel, rc.threads);
        Tensor sparse = sparse_attention(inp, mask, rc.sel.block_size, rc.threads);
        const Tensor full = full_attention_streamed(inp, rc.sel.block_size, rc.threads);
        const double err = output_error(sparse, full);
        const double dens = density(mask, rc.sel.causal);

        std::vector<std::int64_t> select_ns, attend_ns, full_ns;
        for (std::size_t r = 0; r < reps; ++r) {
            auto t0 = std::chrono::steady_clock::now();
            mask = build_mask(inp, rc.sel, rc.threads);
            select_ns.push_back(elapsed_ns(t0));

            t0 = std::chrono::steady_clock::now();
            sparse = sparse_attention(inp, mask, rc.sel.block_size, rc.threads);
            attend_ns.push_back(elapsed_ns(t0));

            t0 = std::chrono::steady_clock::now();
            const Tensor dense = full_attention_streamed(inp, rc.sel.block_size, rc.threads);
            full_ns.push_back(elapsed_ns(t0));
            if (dense.data.empty()) {
                throw ShapeError("dense baseline produced no output");
            }
        }
        const std::int64_t sel_med = median_ns(select_ns);
        const std::int64_t att_med = median_ns(attend_ns);
        const std::int64_t full_med = median_ns(full_ns);
        const double speedup = static_cast<double>(full_med) /
                               static_cast<double>(std::max<std::int64_t>(1, sel_med + att_med));

        csv << inp.seq_len() << ',' << rc.sel.block_size << ',' << rc.sel.stride << ','
            << format_double(rc.sel.tau) << ',' << pattern_name(rc.sel.pattern) << ','
            << strategy_name(rc.sel.strategy) << ',' << h << ',' << format_double(dens) << ','
            << sel_med << ',' << att_med << ',' << full_med << ',' << format_double(speedup)
            << ',' << format_double(err) << ',' << rc.seed << "\n";
        std::cout << "head=" << h << " density=" << format_double(dens)
                  << " select_ns=" << sel_med << " attend_ns=" << att_med
                  << " full_ns=" << full_med << " speedup=" << format_double(speedup)
                  << " output_error=" << format_double(err) << "\n";
    }
    write_file_atomically(out_path, csv.str());
    std::cout << "bench out=" << out_path << " reps=" << reps << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    RunConfig rc;
    std::string config_path;
    std::string spec_path;
    std::string workload_dir;
    std::string out_dir;
    std::string pattern_text;
    std::string strategy_text;
    bool causal_flag = true;
    bool force_diag_flag = true;
    bool force_first_flag = false;

    CLI::App app{"Block-sparse attention with antidiagonal block scoring"};
    app.require_subcommand(1);

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--seed", rc.seed, "Seed for generation and the random pattern");
        cmd->add_option("--block-size", rc.sel.block_size, "Attention block size B");
        cmd->add_option("--stride", rc.sel.stride, "Tile stride S");
        cmd->add_option("--tau", rc.sel.tau, "Threshold mass tau");
        cmd->add_option("--pattern", pattern_text,
                        "Scoring pattern: antidiagonal|diagonal|random|fullsum");
        cmd->add_option("--strategy", strategy_text,
                        "Selection strategy: threshold|topk:K|topratio:R");
        cmd->add_option("--causal", causal_flag, "Causal masking (true/false)");
        cmd->add_option("--force-diag", force_diag_flag, "Always keep the diagonal block");
        cmd->add_option("--force-first", force_first_flag, "Always keep key block 0");
        cmd->add_option("--threads", rc.threads, "Worker thread count");
        cmd->add_option("--out", rc.out, "Output path");
    };

    auto* gen = app.add_subcommand("gen-workload", "Generate a synthetic workload directory");
    gen->add_option("spec", spec_path, "Workload spec JSON")->required();
    gen->add_option("out_dir", out_dir, "Destination directory")->required();
    add_common(gen);

    auto* score = app.add_subcommand("score", "Emit tile score maps per query block");
    score->add_option("workload", workload_dir, "Workload directory")->required();
    add_common(score);

    auto* select = app.add_subcommand("select", "Emit block masks and densities");
    select->add_option("workload", workload_dir, "Workload directory")->required();
    add_common(select);

    auto* attend = app.add_subcommand("attend", "Run sparse attention and report error");
    attend->add_option("workload", workload_dir, "Workload directory")->required();
    attend->add_flag("--no-oracle", rc.no_oracle, "Skip the dense oracle comparison");
    add_common(attend);

    auto* ablate = app.add_subcommand("ablate", "Pattern x stride x strategy grid CSV");
    ablate->add_option("workload", workload_dir, "Workload directory")->required();
    add_common(ablate);

    auto* calibrate = app.add_subcommand("calibrate", "Per-head threshold calibration JSON");
    calibrate->add_option("workload", workload_dir, "Workload directory")->required();
    add_common(calibrate);

    auto* bench = app.add_subcommand("bench", "Timed selection/attention benchmark CSV");
    bench->add_option("workload", workload_dir, "Workload directory")->required();
    add_common(bench);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        CLI::App* cmd = app.get_subcommands().front();

        // Precedence: flags > JSON config > defaults.
        RunConfig merged;
        if (cmd->count("--config") > 0) {
            apply_config_json(merged, config_path);
        }
        if (cmd->count("--seed") > 0) {
            merged.seed = rc.seed;
            merged.seed_set = true;
        }
        if (cmd->count("--block-size") > 0) merged.sel.block_size = rc.sel.block_size;
        if (cmd->count("--stride") > 0) merged.sel.stride = rc.sel.stride;
        if (cmd->count("--tau") > 0) merged.sel.tau = rc.sel.tau;
        if (cmd->count("--pattern") > 0) merged.sel.pattern = parse_pattern(pattern_text);
        if (cmd->count("--strategy") > 0) apply_strategy(merged.sel, strategy_text);
        if (cmd->count("--causal") > 0) {
            merged.sel.causal = causal_flag;
            merged.causal_set = true;
        }
        if (cmd->count("--force-diag") > 0) merged.sel.force_diagonal_block = force_diag_flag;
        if (cmd->count("--force-first") > 0) merged.sel.force_first_block = force_first_flag;
        if (cmd->count("--threads") > 0) {
            merged.threads = rc.threads;
        } else if (merged.threads == 1) {
            if (const char* env = std::getenv("XATTN_THREADS")) {
                try {
                    merged.threads = std::stoull(env);
                } catch (const std::exception&) {
                    throw ConfigError(std::string("bad XATTN_THREADS value: ") + env);
                }
            }
        }
        if (merged.threads < 1) {
            throw ConfigError("thread count must be at least 1");
        }
        if (cmd->count("--out") > 0) merged.out = rc.out;
        merged.no_oracle = rc.no_oracle;

        if (cmd == gen) return cmd_gen_workload(spec_path, out_dir, merged);
        if (cmd == score) return cmd_score(workload_dir, merged);
        if (cmd == select) return cmd_select(workload_dir, merged);
        if (cmd == attend) return cmd_attend(workload_dir, merged);
        if (cmd == ablate) return cmd_ablate(workload_dir, merged);
        if (cmd == calibrate) return cmd_calibrate(workload_dir, merged);
        if (cmd == bench) return cmd_bench(workload_dir, merged);
        throw ConfigError("unknown subcommand");
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
}
