// Copyright 2026 The tgmvae authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "tgmvae/pipeline.hpp"
#include "tgmvae/version.hpp"

namespace {

namespace fs = std::filesystem;
using tgmvae::io::RunConfig;

struct CommonArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::vector<std::uint64_t> seeds;
    std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "run configuration file (key = value lines)");
    cmd->add_option("--seed", args.seed, "RNG seed")->each([&](const std::string&) { args.seed_given = true; });
    cmd->add_option("--seeds", args.seeds, "comma-separated seeds; fans out one run per seed")->delimiter(',');
    cmd->add_option("--out", args.out, "output directory")->required();
}

RunConfig load_run_config(const CommonArgs& args) {
    RunConfig cfg;
    if (!args.config_path.empty()) cfg = tgmvae::io::load_config(args.config_path);
    return cfg;
}

std::vector<std::uint64_t> resolve_seeds(const CommonArgs& args, const RunConfig& cfg) {
    if (!args.seeds.empty()) return args.seeds;
    if (args.seed_given) return {args.seed};
    return {cfg.model.seed};
}

unsigned worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

// Runs one body per seed; a single seed runs in place, several fan out into
// seed_<s>/ subdirectories.
template <typename Body>
void run_seeded(const CommonArgs& args, const RunConfig& cfg, bool aggregate_metrics, Body&& body) {
    const std::vector<std::uint64_t> seeds = resolve_seeds(args, cfg);
    const fs::path out_root = args.out;
    if (seeds.size() == 1) {
        body(seeds.front(), out_root);
        return;
    }
    tgmvae::pipeline::run_per_seed(seeds, worker_count(), out_root, body);
    if (aggregate_metrics) tgmvae::pipeline::aggregate_seed_metrics(seeds, out_root);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"truncated Gaussian-mixture VAE: simulation, training, and evaluation"};
    app.set_version_flag("--version", std::string("tgmvae ") + tgmvae::kVersion);
    app.require_subcommand(1);

    CommonArgs sim_args;
    int sim_roi = 0;
    CLI::App* sim_cmd = app.add_subcommand("simulate", "generate a synthetic connectivity dataset");
    add_common(sim_cmd, sim_args);
    sim_cmd->add_option("--roi", sim_roi, "override the number of regions of interest");

    CommonArgs train_args;
    std::string train_data;
    double train_gamma = -1.0;
    std::vector<int> train_dims;
    int train_epochs = -1;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model on a dataset file");
    add_common(train_cmd, train_args);
    train_cmd->add_option("--data", train_data, "dataset file (.tgmv)")->required();
    train_cmd->add_option("--gamma", train_gamma, "override the remainder prior (0 = plain GM-VAE)");
    train_cmd->add_option("--dims", train_dims, "override encoder dims h1,h2,latent)")->delimiter(',');
    train_cmd->add_option("--epochs", train_epochs, "override the number of training epochs");

    CommonArgs eval_args;
    std::string eval_ckpt, eval_data, eval_truth, eval_comm;
    CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint against ground truth");
    add_common(eval_cmd, eval_args);
    eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint (.tgmc)")->required();
    eval_cmd->add_option("--data", eval_data, "dataset file (.tgmv)")->required();
    eval_cmd->add_option("--truth", eval_truth, "ground-truth label file (.tgmv with labels)")->required();
    eval_cmd->add_option("--communities", eval_comm, "community matrices file (.tgmv)")->required();

    CommonArgs base_args;
    std::string base_data, base_truth, base_comm;
    int base_k = 0;
    CLI::App* base_cmd = app.add_subcommand("baseline", "fit and score the GMM-EM baseline");
    add_common(base_cmd, base_args);
    base_cmd->add_option("--data", base_data, "dataset file (.tgmv)")->required();
    base_cmd->add_option("--truth", base_truth, "ground-truth label file (.tgmv with labels)")->required();
    base_cmd->add_option("--communities", base_comm, "community matrices file (.tgmv)")->required();
    base_cmd->add_option("--k", base_k, "number of GMM clusters (default: K - 1 from config)");

    CommonArgs mnist_args;
    std::string mnist_images, mnist_labels;
    CLI::App* mnist_cmd = app.add_subcommand("mnist", "run the MNIST mixture experiment");
    add_common(mnist_cmd, mnist_args);
    mnist_cmd->add_option("--images", mnist_images, "IDX image file")->required();
    mnist_cmd->add_option("--labels", mnist_labels, "IDX label file")->required();

    std::vector<std::string> report_inputs;
    std::string report_out;
    CLI::App* report_cmd = app.add_subcommand("report", "aggregate metric CSVs into mean/std rows");
    report_cmd->add_option("inputs", report_inputs, "metrics.csv files")->required();
    report_cmd->add_option("--out", report_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (sim_cmd->parsed()) {
            RunConfig cfg = load_run_config(sim_args);
            if (sim_cmd->count("--roi")) cfg.sim.n_roi = sim_roi;
            run_seeded(sim_args, cfg, false, [&](std::uint64_t seed, const fs::path& out) {
                const auto r = tgmvae::pipeline::cmd_simulate(cfg, seed, out);
                std::printf("simulate: seed %llu -> %zu windows of dim %zu under %s\n",
                            static_cast<unsigned long long>(seed), r.n_windows, r.dim, out.string().c_str());
            });
        } else if (train_cmd->parsed()) {
            RunConfig cfg = load_run_config(train_args);
            if (train_cmd->count("--gamma")) cfg.model.gamma = train_gamma;
            if (train_cmd->count("--epochs")) cfg.model.epochs = train_epochs;
            if (!train_dims.empty()) {
                if (train_dims.size() != 3) throw tgmvae::config_error("--dims needs exactly 3 entries");
                cfg.model.encoder_dims = {train_dims[0], train_dims[1], train_dims[2]};
            }
            run_seeded(train_args, cfg, false, [&](std::uint64_t seed, const fs::path& out) {
                const auto r = tgmvae::pipeline::cmd_train(cfg, seed, train_data, out);
                std::printf("train: seed %llu -> %s (final loss %g)\n", static_cast<unsigned long long>(seed),
                            r.checkpoint.string().c_str(), r.final_loss.total);
            });
        } else if (eval_cmd->parsed()) {
            RunConfig cfg = load_run_config(eval_args);
            const auto r = tgmvae::pipeline::cmd_eval(cfg, eval_ckpt, eval_data, eval_truth, eval_comm,
                                                      eval_args.out);
            std::printf("eval: %s accuracy %.4f\n", r.method.c_str(), r.accuracy);
        } else if (base_cmd->parsed()) {
            RunConfig cfg = load_run_config(base_args);
            const int k = base_cmd->count("--k") ? base_k : cfg.model.k_classes - 1;
            run_seeded(base_args, cfg, true, [&](std::uint64_t seed, const fs::path& out) {
                const auto r = tgmvae::pipeline::cmd_baseline(cfg, seed, base_data, base_truth, base_comm, k, out);
                std::printf("baseline: seed %llu gmm accuracy %.4f\n", static_cast<unsigned long long>(seed),
                            r.accuracy);
            });
        } else if (mnist_cmd->parsed()) {
            RunConfig cfg = load_run_config(mnist_args);
            run_seeded(mnist_args, cfg, true, [&](std::uint64_t seed, const fs::path& out) {
                const auto r = tgmvae::pipeline::cmd_mnist(cfg, seed, mnist_images, mnist_labels, out);
                std::printf("mnist: seed %llu digits %d,%d,%d acc4 %.4f acc3 %.4f remainder recall %.4f\n",
                            static_cast<unsigned long long>(seed), r.digits[0], r.digits[1], r.digits[2],
                            r.accuracy_4class, r.accuracy_3class, r.remainder_recall);
            });
        } else if (report_cmd->parsed()) {
            std::vector<fs::path> inputs(report_inputs.begin(), report_inputs.end());
            tgmvae::pipeline::cmd_report(inputs, report_out);
            std::printf("report: %zu inputs -> %s/report.csv\n", inputs.size(), report_out.c_str());
        }
    } catch (const tgmvae::config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const tgmvae::data_error& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const tgmvae::numeric_error& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
