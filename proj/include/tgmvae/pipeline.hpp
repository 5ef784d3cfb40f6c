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

#pragma once

#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tgmvae/connsim.hpp"
#include "tgmvae/dataio.hpp"
#include "tgmvae/errors.hpp"
#include "tgmvae/evalkit.hpp"
#include "tgmvae/mixmath.hpp"
#include "tgmvae/model.hpp"
#include "tgmvae/version.hpp"

namespace tgmvae::pipeline {

namespace fs = std::filesystem;

inline nlohmann::json config_json(const io::RunConfig& cfg) {
    nlohmann::json j;
    const ModelConfig& m = cfg.model;
    j["input_dim"] = m.input_dim;
    j["encoder_dims"] = m.encoder_dims;
    j["K"] = m.k_classes;
    j["gamma"] = m.gamma;
    j["lambda"] = m.lambda;
    j["sigma_x"] = m.sigma_x;
    j["alpha"] = m.alpha;
    j["beta"] = m.beta;
    j["recon_loss"] = recon_loss_name(m.recon_loss);
    j["epochs"] = m.epochs;
    j["batch_size"] = m.batch_size;
    j["pretrain_epochs"] = m.pretrain_epochs;
    j["seed"] = m.seed;
    j["n_states"] = cfg.sim.n_states;
    j["n_major"] = cfg.sim.n_major;
    j["n_roi"] = cfg.sim.n_roi;
    j["t_points"] = cfg.sim.t_points;
    j["window"] = cfg.sim.window;
    j["noise_std"] = cfg.sim.noise_std;
    j["shrinkage"] = cfg.sim.shrinkage;
    j["strong_corr_threshold"] = cfg.sim.strong_corr_threshold;
    j["major_fraction"] = cfg.mnist.major_fraction;
    j["mnist_digits"] = cfg.mnist.digits;
    // optimizer settings are fixed; recorded for reproducibility
    j["optimizer"] = {{"name", "adam"}, {"lr", 1e-3}, {"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}};
    return j;
}

// One manifest per command invocation, written atomically at the end of the
// run (including aborted runs, which carry a note).
class ManifestWriter {
public:
    ManifestWriter(std::string command, const io::RunConfig& cfg, std::uint64_t seed, const fs::path& out)
        : out_(out), start_(std::chrono::steady_clock::now()) {
        j_["tool"] = "tgmvae";
        j_["version"] = kVersion;
        j_["command"] = std::move(command);
        j_["seed"] = seed;
        j_["config"] = config_json(cfg);
        j_["status"] = "ok";
    }

    void add_artifact(const std::string& name, const fs::path& p) { j_["artifacts"][name] = p.string(); }
    void add_value(const std::string& key, const nlohmann::json& v) { j_[key] = v; }
    void note(const std::string& status, const std::string& message) {
        j_["status"] = status;
        j_["note"] = message;
    }

    void write() {
        const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        j_["timings"]["wall_seconds"] = elapsed;
        io::detail::write_atomic(out_ / "manifest.json", j_.dump(2) + "\n");
    }

private:
    nlohmann::json j_;
    fs::path out_;
    std::chrono::steady_clock::time_point start_;
};

inline std::string method_name(const ModelConfig& cfg) { return cfg.gamma == 0.0 ? "gm-vae" : "tgm-vae"; }

// ---------------------------------------------------------------------------
// simulate: state sequence -> signals -> windowed correlations + ground truth
// ---------------------------------------------------------------------------

struct SimulateResult {
    fs::path series, windows, window_truth, sequence_truth, communities;
    std::size_t n_windows = 0;
    std::size_t dim = 0;
};

inline SimulateResult cmd_simulate(io::RunConfig cfg, std::uint64_t seed, const fs::path& out) {
    cfg.model.seed = seed;
    cfg.validate();
    fs::create_directories(out);
    ManifestWriter manifest("simulate", cfg, seed, out);

    const io::SimOptions& s = cfg.sim;
    const sim::TransitionMatrix tm = sim::sample_transition_matrix(s.n_states, s.n_major, seed);
    const sim::StateSequence seq = sim::sample_state_sequence(tm, s.t_points, seed);
    const std::vector<sim::CommunityMatrix> communities = sim::make_community_matrices(s.n_states, s.n_roi, seed);
    const nd::Matrix series = sim::synthesize_signals(seq, communities, s.noise_std, seed);
    const std::vector<sim::CorrelationSample> windows = sim::sliding_window_correlations(series, s.window, s.shrinkage);
    const sim::StateSequence window_truth = sim::ground_truth_window_labels(seq, s.window);

    SimulateResult r;
    r.n_windows = windows.size();
    r.dim = windows.empty() ? 0 : windows.front().vec.size();

    r.series = out / "series.tgmv";
    io::write_dataset(r.series, series);

    nd::Matrix wmat(windows.size(), r.dim);
    for (std::size_t i = 0; i < windows.size(); ++i)
        for (std::size_t j = 0; j < r.dim; ++j) wmat(i, j) = windows[i].vec[j];
    r.windows = out / "windows.tgmv";
    io::write_dataset(r.windows, wmat);

    nd::Matrix centers(windows.size(), 1);
    std::vector<std::uint16_t> wlabels(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        centers(i, 0) = static_cast<double>(windows[i].window_center);
        wlabels[i] = static_cast<std::uint16_t>(window_truth.labels[i]);
    }
    r.window_truth = out / "window_truth.tgmv";
    io::write_dataset(r.window_truth, centers, &wlabels);

    nd::Matrix times(seq.labels.size(), 1);
    std::vector<std::uint16_t> slabels(seq.labels.size());
    for (std::size_t i = 0; i < seq.labels.size(); ++i) {
        times(i, 0) = static_cast<double>(i);
        slabels[i] = static_cast<std::uint16_t>(seq.labels[i]);
    }
    r.sequence_truth = out / "sequence_truth.tgmv";
    io::write_dataset(r.sequence_truth, times, &slabels);

    const auto rr = static_cast<std::size_t>(s.n_roi);
    nd::Matrix cmat(communities.size(), rr * rr);
    for (std::size_t i = 0; i < communities.size(); ++i)
        for (std::size_t a = 0; a < rr; ++a)
            for (std::size_t b = 0; b < rr; ++b) cmat(i, a * rr + b) = communities[i].c(a, b);
    r.communities = out / "communities.tgmv";
    io::write_dataset(r.communities, cmat);

    io::save_config(out / "config_resolved.cfg", cfg);
    manifest.add_artifact("series", r.series);
    manifest.add_artifact("windows", r.windows);
    manifest.add_artifact("window_truth", r.window_truth);
    manifest.add_artifact("sequence_truth", r.sequence_truth);
    manifest.add_artifact("communities", r.communities);
    manifest.add_artifact("config", out / "config_resolved.cfg");
    manifest.add_value("n_windows", r.n_windows);
    manifest.write();
    return r;
}

// ---------------------------------------------------------------------------
// train: dataset -> checkpoint + per-epoch loss history
// ---------------------------------------------------------------------------

struct TrainOutputs {
    fs::path checkpoint, history;
    LossBreakdown final_loss;
};

inline TrainOutputs cmd_train(io::RunConfig cfg, std::uint64_t seed, const fs::path& data_path, const fs::path& out) {
    cfg.model.seed = seed;
    fs::create_directories(out);

    const io::Dataset data = io::read_dataset(data_path);
    if (cfg.model.input_dim == 0) cfg.model.input_dim = static_cast<int>(data.samples.cols());
    if (cfg.model.input_dim != static_cast<int>(data.samples.cols()))
        throw data_error("train: config input_dim " + std::to_string(cfg.model.input_dim) +
                         " does not match dataset dimension " + std::to_string(data.samples.cols()));
    cfg.model.resolve_dims();
    cfg.validate();
    cfg.model.validate();

    ManifestWriter manifest("train", cfg, seed, out);
    manifest.add_artifact("dataset", data_path);
    io::save_config(out / "config_resolved.cfg", cfg);
    manifest.add_artifact("config", out / "config_resolved.cfg");

    const MinMaxNormalizer norm = MinMaxNormalizer::fit(data.samples);
    nd::Matrix normalized = data.samples;
    norm.transform(normalized);

    TrainOutputs outputs;
    try {
        const TrainResult tr = train(cfg.model, normalized);

        io::Checkpoint ck;
        ck.config = cfg.model;
        ck.params = tr.params;
        ck.norm_min = norm.mins;
        ck.norm_max = norm.maxs;
        ck.seed = seed;
        ck.step = tr.optimizer_steps;
        outputs.checkpoint = out / "model.tgmc";
        io::save_checkpoint(outputs.checkpoint, ck);

        std::string hist = "phase,epoch,recon,kl_gauss,kl_cat,kl_bern,dir_prior,total\n";
        for (const TrainHistoryRow& row : tr.history) {
            hist += std::string(row.pretrain ? "pretrain" : "train") + "," + std::to_string(row.epoch) + "," +
                    io::detail::format_double(row.loss.recon) + "," + io::detail::format_double(row.loss.kl_gauss) +
                    "," + io::detail::format_double(row.loss.kl_cat) + "," +
                    io::detail::format_double(row.loss.kl_bern) + "," +
                    io::detail::format_double(row.loss.dir_prior) + "," + io::detail::format_double(row.loss.total) +
                    "\n";
        }
        outputs.history = out / "history.csv";
        io::detail::write_atomic(outputs.history, hist);
        if (!tr.history.empty()) outputs.final_loss = tr.history.back().loss;

        manifest.add_artifact("checkpoint", outputs.checkpoint);
        manifest.add_artifact("history", outputs.history);
        manifest.add_value("method", method_name(cfg.model));
        manifest.add_value("optimizer_steps", tr.optimizer_steps);
        manifest.write();
    } catch (const numeric_error& e) {
        manifest.note("aborted", e.what());
        manifest.write();
        throw;
    }
    return outputs;
}

// ---------------------------------------------------------------------------
// Shared scoring: Frobenius-match predicted clusters to the major community
// matrices, then 6-class accuracy plus dwell/occupancy/confusion metrics.
// ---------------------------------------------------------------------------

struct ScoreResult {
    double accuracy = 0.0;
    std::vector<int> mapped;  // predictions mapped onto truth class ids
    metrics::ClusterMatching matching;
};

inline ScoreResult score_against_communities(const std::vector<int>& pred, const std::vector<int>& truth,
                                             const nd::Matrix& raw_samples,
                                             const std::vector<nd::Matrix>& major_communities, int k_classes) {
    const int n_clusters = k_classes - 1;
    const std::size_t r = major_communities.empty() ? 0 : major_communities.front().rows();

    std::vector<std::vector<double>> sums(static_cast<std::size_t>(n_clusters),
                                          std::vector<double>(raw_samples.cols(), 0.0));
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_clusters), 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] >= 1 && pred[i] <= n_clusters) {
            const auto c = static_cast<std::size_t>(pred[i] - 1);
            const double* row = raw_samples.row(i);
            for (std::size_t j = 0; j < raw_samples.cols(); ++j) sums[c][j] += row[j];
            ++counts[c];
        }
    }
    std::vector<nd::Matrix> cluster_means;
    cluster_means.reserve(static_cast<std::size_t>(n_clusters));
    for (int c = 0; c < n_clusters; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        if (counts[cc] > 0)
            for (double& v : sums[cc]) v /= static_cast<double>(counts[cc]);
        cluster_means.push_back(sim::full_from_upper(sums[cc], r, 1.0));
    }

    ScoreResult res;
    res.matching = metrics::match_clusters_frobenius(cluster_means, major_communities);
    res.matching.remainder_class = k_classes;
    res.mapped.resize(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        res.mapped[i] = pred[i] == k_classes ? k_classes : res.matching.to_state[static_cast<std::size_t>(pred[i] - 1)];
    res.accuracy = metrics::clustering_accuracy(pred, truth, res.matching);
    return res;
}

inline std::vector<nd::Matrix> load_major_communities(const fs::path& communities_path, int n_major) {
    const io::Dataset cd = io::read_dataset(communities_path);
    if (static_cast<int>(cd.samples.rows()) < n_major)
        throw data_error("communities file has " + std::to_string(cd.samples.rows()) + " rows, need " +
                         std::to_string(n_major));
    const auto rr = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(cd.samples.cols()))));
    if (rr * rr != cd.samples.cols()) throw data_error("communities file rows are not square matrices");
    std::vector<nd::Matrix> out;
    for (int s = 0; s < n_major; ++s) {
        nd::Matrix m(rr, rr);
        for (std::size_t a = 0; a < rr; ++a)
            for (std::size_t b = 0; b < rr; ++b) m(a, b) = cd.samples(static_cast<std::size_t>(s), a * rr + b);
        out.push_back(std::move(m));
    }
    return out;
}

inline std::vector<int> load_truth_labels(const fs::path& truth_path) {
    const io::Dataset td = io::read_dataset(truth_path);
    if (!td.labels) throw data_error("truth file '" + truth_path.string() + "' has no label block");
    std::vector<int> truth(td.labels->size());
    for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = static_cast<int>((*td.labels)[i]);
    return truth;
}

inline void append_common_metrics(std::vector<io::MetricRow>& rows, const std::string& method, std::uint64_t seed,
                                  const ScoreResult& score, const std::vector<int>& truth6, int k_classes,
                                  const nd::Matrix& raw_samples, double strong_threshold) {
    rows.push_back({method, seed, "accuracy", score.accuracy});

    const metrics::DwellStats dwell = metrics::mean_dwell_time(score.mapped, k_classes);
    rows.push_back({method, seed, "dwell_overall", dwell.overall_mean});
    for (int s = 0; s < k_classes; ++s)
        rows.push_back({method, seed, "dwell_state_" + std::to_string(s + 1),
                        dwell.per_state_mean[static_cast<std::size_t>(s)]});
    const std::vector<double> occ = metrics::occupancy_rate(score.mapped, k_classes);
    for (int s = 0; s < k_classes; ++s)
        rows.push_back({method, seed, "occupancy_state_" + std::to_string(s + 1), occ[static_cast<std::size_t>(s)]});

    std::vector<std::vector<int>> confusion(static_cast<std::size_t>(k_classes),
                                            std::vector<int>(static_cast<std::size_t>(k_classes), 0));
    for (std::size_t i = 0; i < truth6.size(); ++i)
        ++confusion[static_cast<std::size_t>(truth6[i] - 1)][static_cast<std::size_t>(score.mapped[i] - 1)];
    for (int t = 0; t < k_classes; ++t)
        for (int p = 0; p < k_classes; ++p)
            rows.push_back({method, seed, "confusion_t" + std::to_string(t + 1) + "_p" + std::to_string(p + 1),
                            static_cast<double>(confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)])});

    std::uint64_t strong = 0;
    for (std::size_t i = 0; i < raw_samples.size(); ++i)
        if (std::abs(raw_samples.data()[i]) >= strong_threshold) ++strong;
    rows.push_back({method, seed, "strong_correlations", static_cast<double>(strong)});
    rows.push_back({method, seed, "n_samples", static_cast<double>(raw_samples.rows())});
}

// ---------------------------------------------------------------------------
// eval: checkpoint + windows + truth + communities -> metrics.csv
// ---------------------------------------------------------------------------

struct EvalSummary {
    double accuracy = 0.0;
    std::string method;
};

inline EvalSummary cmd_eval(const io::RunConfig& run_cfg, const fs::path& checkpoint_path, const fs::path& data_path,
                            const fs::path& truth_path, const fs::path& communities_path, const fs::path& out) {
    fs::create_directories(out);
    const io::Checkpoint ck = io::load_checkpoint(checkpoint_path);
    const io::Dataset data = io::read_dataset(data_path);
    const std::vector<int> truth_states = load_truth_labels(truth_path);
    if (truth_states.size() != data.samples.rows())
        throw data_error("eval: truth has " + std::to_string(truth_states.size()) + " labels for " +
                         std::to_string(data.samples.rows()) + " samples");
    if (static_cast<int>(data.samples.cols()) != ck.config.input_dim)
        throw data_error("eval: dataset dimension " + std::to_string(data.samples.cols()) +
                         " does not match checkpoint input_dim " + std::to_string(ck.config.input_dim));

    const int k_classes = ck.config.k_classes;
    const int n_major = k_classes - 1;
    const std::vector<nd::Matrix> majors = load_major_communities(communities_path, n_major);

    io::RunConfig manifest_cfg = run_cfg;
    manifest_cfg.model = ck.config;
    ManifestWriter manifest("eval", manifest_cfg, ck.seed, out);
    manifest.add_artifact("checkpoint", checkpoint_path);
    manifest.add_artifact("dataset", data_path);
    manifest.add_artifact("truth", truth_path);
    manifest.add_artifact("communities", communities_path);

    MinMaxNormalizer norm;
    norm.mins = ck.norm_min;
    norm.maxs = ck.norm_max;
    nd::Matrix normalized = data.samples;
    norm.transform(normalized);
    const BatchPosterior post = posterior_assign_batch(ck.config, ck.params, normalized);

    std::vector<int> truth6(truth_states.size());
    for (std::size_t i = 0; i < truth_states.size(); ++i)
        truth6[i] = truth_states[i] <= n_major ? truth_states[i] : k_classes;

    const ScoreResult score = score_against_communities(post.labels, truth6, data.samples, majors, k_classes);

    EvalSummary summary;
    summary.accuracy = score.accuracy;
    summary.method = method_name(ck.config);

    std::vector<io::MetricRow> rows;
    append_common_metrics(rows, summary.method, ck.seed, score, truth6, k_classes, data.samples,
                          run_cfg.sim.strong_corr_threshold);
    io::write_metrics_csv(out / "metrics.csv", rows);
    manifest.add_artifact("metrics", out / "metrics.csv");
    manifest.add_value("accuracy", score.accuracy);
    manifest.write();
    return summary;
}

// ---------------------------------------------------------------------------
// baseline: diagonal-covariance GMM fitted by EM on the raw vectors, scored
// exactly like eval.
// ---------------------------------------------------------------------------

inline EvalSummary cmd_baseline(const io::RunConfig& run_cfg, std::uint64_t seed, const fs::path& data_path,
                                const fs::path& truth_path, const fs::path& communities_path, int n_clusters,
                                const fs::path& out) {
    fs::create_directories(out);
    if (n_clusters < 1) throw config_error("baseline: cluster count must be >= 1");
    const io::Dataset data = io::read_dataset(data_path);
    const std::vector<int> truth_states = load_truth_labels(truth_path);
    if (truth_states.size() != data.samples.rows())
        throw data_error("baseline: truth has " + std::to_string(truth_states.size()) + " labels for " +
                         std::to_string(data.samples.rows()) + " samples");
    const std::vector<nd::Matrix> majors = load_major_communities(communities_path, n_clusters);
    const int k_classes = n_clusters + 1;

    io::RunConfig manifest_cfg = run_cfg;
    manifest_cfg.model.seed = seed;
    ManifestWriter manifest("baseline", manifest_cfg, seed, out);
    manifest.add_artifact("dataset", data_path);
    manifest.add_artifact("truth", truth_path);
    manifest.add_artifact("communities", communities_path);

    const mix::GmmFit fit = mix::gmm_em_fit(data.samples, n_clusters, seed);
    std::vector<int> pred(data.samples.rows());
    for (std::size_t i = 0; i < data.samples.rows(); ++i) {
        const std::vector<double> resp =
            mix::gmm_predict(fit.model, std::span<const double>(data.samples.row(i), data.samples.cols()));
        int best = 0;
        for (std::size_t c = 1; c < resp.size(); ++c)
            if (resp[c] > resp[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
        pred[i] = best + 1;
    }

    std::vector<int> truth6(truth_states.size());
    for (std::size_t i = 0; i < truth_states.size(); ++i)
        truth6[i] = truth_states[i] <= n_clusters ? truth_states[i] : k_classes;

    const ScoreResult score = score_against_communities(pred, truth6, data.samples, majors, k_classes);

    std::vector<io::MetricRow> rows;
    append_common_metrics(rows, "gmm", seed, score, truth6, k_classes, data.samples,
                          run_cfg.sim.strong_corr_threshold);
    rows.push_back({"gmm", seed, "em_iterations", static_cast<double>(fit.iterations)});
    io::write_metrics_csv(out / "metrics.csv", rows);
    manifest.add_artifact("metrics", out / "metrics.csv");
    manifest.add_value("accuracy", score.accuracy);
    manifest.add_value("em_iterations", fit.iterations);
    manifest.write();

    EvalSummary summary;
    summary.accuracy = score.accuracy;
    summary.method = "gmm";
    return summary;
}

// ---------------------------------------------------------------------------
// mnist: IDX ingestion -> 90/10 mixture -> train -> 4-class / 3-class
// accuracy and remainder recall.
// ---------------------------------------------------------------------------

struct MnistSummary {
    double accuracy_4class = 0.0;
    double accuracy_3class = 0.0;
    double remainder_recall = 0.0;
    std::array<int, 3> digits{};
};

inline MnistSummary cmd_mnist(io::RunConfig cfg, std::uint64_t seed, const fs::path& images_path,
                              const fs::path& labels_path, const fs::path& out) {
    cfg.model.seed = seed;
    fs::create_directories(out);

    const io::Dataset raw = io::read_idx(images_path, labels_path);
    std::array<int, 3> digits{};
    if (cfg.mnist.digits.empty()) {
        auto rng = make_rng(seed, "digits");
        std::vector<int> pool{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
        std::shuffle(pool.begin(), pool.end(), rng);
        digits = {pool[0], pool[1], pool[2]};
        std::sort(digits.begin(), digits.end());
    } else {
        digits = {cfg.mnist.digits[0], cfg.mnist.digits[1], cfg.mnist.digits[2]};
    }
    const io::MnistMixture mixture = io::make_mnist_mixture(raw, digits, cfg.mnist.major_fraction, seed);
    cfg.mnist.digits = {mixture.digits[0], mixture.digits[1], mixture.digits[2]};

    if (cfg.model.k_classes != 4)
        throw config_error("mnist: K must be 4 (3 major digits + remainder), got " +
                           std::to_string(cfg.model.k_classes));
    cfg.model.input_dim = static_cast<int>(mixture.samples.cols());
    cfg.model.resolve_dims();
    cfg.validate();
    cfg.model.validate();

    ManifestWriter manifest("mnist", cfg, seed, out);
    manifest.add_artifact("images", images_path);
    manifest.add_artifact("labels", labels_path);
    io::save_config(out / "config_resolved.cfg", cfg);
    manifest.add_artifact("config", out / "config_resolved.cfg");

    MnistSummary summary;
    summary.digits = mixture.digits;
    try {
        const MinMaxNormalizer norm = MinMaxNormalizer::fit(mixture.samples);
        nd::Matrix normalized = mixture.samples;
        norm.transform(normalized);
        const TrainResult tr = train(cfg.model, normalized);

        io::Checkpoint ck;
        ck.config = cfg.model;
        ck.params = tr.params;
        ck.norm_min = norm.mins;
        ck.norm_max = norm.maxs;
        ck.seed = seed;
        ck.step = tr.optimizer_steps;
        io::save_checkpoint(out / "model.tgmc", ck);
        manifest.add_artifact("checkpoint", out / "model.tgmc");

        const BatchPosterior post = posterior_assign_batch(cfg.model, ck.params, normalized);
        const metrics::ClusterMatching matching =
            metrics::match_clusters_hungarian_labels(post.labels, mixture.truth, 4);
        summary.accuracy_4class = metrics::clustering_accuracy(post.labels, mixture.truth, matching);

        std::size_t major_total = 0, major_correct = 0, rem_total = 0, rem_correct = 0;
        for (std::size_t i = 0; i < post.labels.size(); ++i) {
            const int mapped = post.labels[i] == 4 ? 4 : matching.to_state[static_cast<std::size_t>(post.labels[i] - 1)];
            if (mixture.truth[i] <= 3) {
                ++major_total;
                if (mapped == mixture.truth[i]) ++major_correct;
            } else {
                ++rem_total;
                if (mapped == 4) ++rem_correct;
            }
        }
        summary.accuracy_3class = major_total ? static_cast<double>(major_correct) / major_total : 0.0;
        summary.remainder_recall = rem_total ? static_cast<double>(rem_correct) / rem_total : 0.0;

        // per-class mean images (3 clusters + remainder) for visual inspection
        nd::Matrix means(4, mixture.samples.cols());
        std::array<std::size_t, 4> counts{};
        for (std::size_t i = 0; i < post.labels.size(); ++i) {
            const auto c = static_cast<std::size_t>(post.labels[i] - 1);
            ++counts[c];
            const double* row = mixture.samples.row(i);
            for (std::size_t j = 0; j < mixture.samples.cols(); ++j) means(c, j) += row[j];
        }
        for (std::size_t c = 0; c < 4; ++c)
            if (counts[c] > 0)
                for (std::size_t j = 0; j < means.cols(); ++j) means(c, j) /= static_cast<double>(counts[c]);
        io::write_dataset(out / "cluster_means.tgmv", means);
        manifest.add_artifact("cluster_means", out / "cluster_means.tgmv");

        std::vector<io::MetricRow> rows;
        rows.push_back({"tgm-vae", seed, "accuracy_4class", summary.accuracy_4class});
        rows.push_back({"tgm-vae", seed, "accuracy_3class", summary.accuracy_3class});
        rows.push_back({"tgm-vae", seed, "remainder_recall", summary.remainder_recall});
        for (int i = 0; i < 3; ++i)
            rows.push_back({"tgm-vae", seed, "digit_" + std::to_string(i + 1),
                            static_cast<double>(summary.digits[static_cast<std::size_t>(i)])});
        rows.push_back({"tgm-vae", seed, "n_samples", static_cast<double>(mixture.samples.rows())});
        io::write_metrics_csv(out / "metrics.csv", rows);
        manifest.add_artifact("metrics", out / "metrics.csv");
        manifest.add_value("accuracy_4class", summary.accuracy_4class);
        manifest.add_value("accuracy_3class", summary.accuracy_3class);
        manifest.add_value("remainder_recall", summary.remainder_recall);
        manifest.write();
    } catch (const numeric_error& e) {
        manifest.note("aborted", e.what());
        manifest.write();
        throw;
    }
    return summary;
}

// ---------------------------------------------------------------------------
// report: aggregate metric CSVs into per-(method, metric) mean/std rows.
// ---------------------------------------------------------------------------

inline void cmd_report(const std::vector<fs::path>& inputs, const fs::path& out) {
    fs::create_directories(out);
    std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
    for (const fs::path& p : inputs)
        for (const io::MetricRow& row : io::read_metrics_csv(p)) groups[{row.method, row.metric}].push_back(row.value);

    std::string text = "method,metric,n,mean,std\n";
    for (const auto& [key, values] : groups) {
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        const double stddev = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
        text += key.first + "," + key.second + "," + std::to_string(values.size()) + "," +
                io::detail::format_double(mean) + "," + io::detail::format_double(stddev) + "\n";
    }
    io::detail::write_atomic(out / "report.csv", text);
}

// ---------------------------------------------------------------------------
// Multi-seed fan-out: one isolated run per worker thread, deterministic
// per-seed output directories.
// ---------------------------------------------------------------------------

inline void run_per_seed(const std::vector<std::uint64_t>& seeds, unsigned max_workers, const fs::path& out_root,
                         const std::function<void(std::uint64_t, const fs::path&)>& body) {
    if (seeds.empty()) throw config_error("no seeds given");
    fs::create_directories(out_root);
    const unsigned workers = std::max(1u, std::min<unsigned>(max_workers, static_cast<unsigned>(seeds.size())));
    std::mutex mx;
    std::size_t next = 0;
    std::exception_ptr failure;
    auto worker = [&]() {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard<std::mutex> lock(mx);
                if (failure || next >= seeds.size()) return;
                i = next++;
            }
            try {
                body(seeds[i], out_root / ("seed_" + std::to_string(seeds[i])));
            } catch (...) {
                std::lock_guard<std::mutex> lock(mx);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

// Merge per-seed metrics under out_root/seed_*/metrics.csv into one combined
// CSV plus an aggregated report.
inline void aggregate_seed_metrics(const std::vector<std::uint64_t>& seeds, const fs::path& out_root) {
    std::vector<io::MetricRow> combined;
    std::vector<fs::path> sources;
    for (std::uint64_t s : seeds) {
        const fs::path p = out_root / ("seed_" + std::to_string(s)) / "metrics.csv";
        if (!fs::exists(p)) continue;
        sources.push_back(p);
        for (const io::MetricRow& row : io::read_metrics_csv(p)) combined.push_back(row);
    }
    if (sources.empty()) return;
    io::write_metrics_csv(out_root / "metrics.csv", combined);
    cmd_report({out_root / "metrics.csv"}, out_root);
}

}  // namespace tgmvae::pipeline
