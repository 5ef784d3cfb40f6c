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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tgmvae/connsim.hpp"
#include "tgmvae/errors.hpp"
#include "tgmvae/matrix.hpp"

namespace tgmvae::metrics {

// Exact minimum-cost assignment (Jonker-Volgenant style shortest augmenting
// paths, O(n^3)). Rectangular inputs are padded to square with zero cost.
// Returns the assigned column for each row (or -1 for padded rows).
inline std::vector<int> assignment_min_cost(const nd::Matrix& cost) {
    const std::size_t n_rows = cost.rows();
    const std::size_t n_cols = cost.cols();
    if (n_rows == 0 || n_cols == 0) throw data_error("assignment_min_cost: empty cost matrix");
    const std::size_t dim = std::max(n_rows, n_cols);

    // 1-indexed working copy with a dummy row/column 0
    std::vector<std::vector<double>> a(dim + 1, std::vector<double>(dim + 1, 0.0));
    for (std::size_t i = 0; i < n_rows; ++i)
        for (std::size_t j = 0; j < n_cols; ++j) a[i + 1][j + 1] = cost(i, j);

    std::vector<double> u(dim + 1, 0.0), v(dim + 1, 0.0);
    std::vector<std::size_t> p(dim + 1, 0), way(dim + 1, 0);
    for (std::size_t i = 1; i <= dim; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(dim + 1, std::numeric_limits<double>::infinity());
        std::vector<char> used(dim + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            std::size_t j1 = 0;
            double delta = std::numeric_limits<double>::infinity();
            for (std::size_t j = 1; j <= dim; ++j) {
                if (used[j]) continue;
                const double cur = a[i0][j] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= dim; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> assignment(n_rows, -1);
    for (std::size_t j = 1; j <= dim; ++j)
        if (p[j] >= 1 && p[j] <= n_rows && j <= n_cols) assignment[p[j] - 1] = static_cast<int>(j - 1);
    return assignment;
}

// Injective map from predicted major clusters 1..C to ground-truth classes;
// anything it cannot place (and the predicted remainder) maps to
// remainder_class.
struct ClusterMatching {
    std::vector<int> to_state;  // to_state[c-1] = matched class id for cluster c
    int remainder_class = 0;
};

// Optimal one-to-one link between cluster mean matrices and community
// matrices under the Frobenius distance; diagonals are excluded because
// correlation means carry a unit diagonal while communities carry {0,1}.
inline ClusterMatching match_clusters_frobenius(const std::vector<nd::Matrix>& cluster_means,
                                                const std::vector<nd::Matrix>& communities) {
    if (cluster_means.empty() || communities.empty())
        throw data_error("match_clusters_frobenius: need at least one cluster and one community");
    const std::size_t r = communities.front().rows();
    for (const nd::Matrix& m : cluster_means)
        if (m.rows() != r || m.cols() != r)
            throw data_error("match_clusters_frobenius: dimension mismatch (" + m.shape_str() + ")");
    for (const nd::Matrix& m : communities)
        if (m.rows() != r || m.cols() != r)
            throw data_error("match_clusters_frobenius: dimension mismatch (" + m.shape_str() + ")");

    const std::size_t n_clusters = cluster_means.size();
    const std::size_t n_states = communities.size();
    nd::Matrix cost(n_clusters, n_states);
    for (std::size_t c = 0; c < n_clusters; ++c)
        for (std::size_t s = 0; s < n_states; ++s) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < r; ++j) {
                    if (i == j) continue;
                    const double t = cluster_means[c](i, j) - communities[s](i, j);
                    d2 += t * t;
                }
            cost(c, s) = d2;
        }

    const std::vector<int> assign = assignment_min_cost(cost);
    ClusterMatching m;
    m.remainder_class = static_cast<int>(n_states) + 1;
    m.to_state.resize(n_clusters);
    for (std::size_t c = 0; c < n_clusters; ++c)
        m.to_state[c] = assign[c] >= 0 ? assign[c] + 1 : m.remainder_class;
    return m;
}

// Best permutation of predicted major clusters against true major classes by
// exact assignment on the contingency table. The remainder class (id
// n_classes) is fixed and never permuted.
inline ClusterMatching match_clusters_hungarian_labels(std::span<const int> pred, std::span<const int> truth,
                                                       int n_classes) {
    if (pred.size() != truth.size()) throw data_error("match_clusters_hungarian_labels: length mismatch");
    if (n_classes < 2) throw config_error("match_clusters_hungarian_labels: need n_classes >= 2");
    const int n_major = n_classes - 1;
    nd::Matrix agree(static_cast<std::size_t>(n_major), static_cast<std::size_t>(n_major));
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 1 || pred[i] > n_classes)
            throw data_error("match_clusters_hungarian_labels: predicted label " + std::to_string(pred[i]) +
                             " out of range");
        if (truth[i] < 1 || truth[i] > n_classes)
            throw data_error("match_clusters_hungarian_labels: true label " + std::to_string(truth[i]) +
                             " out of range");
        if (pred[i] <= n_major && truth[i] <= n_major)
            agree(static_cast<std::size_t>(pred[i] - 1), static_cast<std::size_t>(truth[i] - 1)) += 1.0;
    }
    nd::Matrix cost(static_cast<std::size_t>(n_major), static_cast<std::size_t>(n_major));
    for (std::size_t i = 0; i < cost.rows(); ++i)
        for (std::size_t j = 0; j < cost.cols(); ++j) cost(i, j) = -agree(i, j);

    const std::vector<int> assign = assignment_min_cost(cost);
    ClusterMatching m;
    m.remainder_class = n_classes;
    m.to_state.resize(static_cast<std::size_t>(n_major));
    for (int c = 0; c < n_major; ++c)
        m.to_state[static_cast<std::size_t>(c)] = assign[static_cast<std::size_t>(c)] + 1;
    return m;
}

// Fraction of points whose mapped prediction equals the truth.
inline double clustering_accuracy(std::span<const int> pred, std::span<const int> truth,
                                  const ClusterMatching& matching) {
    if (pred.size() != truth.size()) throw data_error("clustering_accuracy: length mismatch");
    if (pred.empty()) throw data_error("clustering_accuracy: empty labels");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        int mapped;
        if (pred[i] == matching.remainder_class) {
            mapped = matching.remainder_class;
        } else {
            if (pred[i] < 1 || static_cast<std::size_t>(pred[i]) > matching.to_state.size())
                throw data_error("clustering_accuracy: predicted label " + std::to_string(pred[i]) +
                                 " has no matching entry");
            mapped = matching.to_state[static_cast<std::size_t>(pred[i] - 1)];
        }
        if (mapped == truth[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

struct DwellStats {
    std::vector<double> per_state_mean;  // mean maximal-run length, 0 for absent states
    std::vector<int> per_state_runs;     // number of maximal runs per state
    double overall_mean = 0.0;           // mean over all runs of all states
    int total_runs = 0;
};

inline DwellStats mean_dwell_time(std::span<const int> labels, int n_states) {
    if (labels.empty()) throw data_error("mean_dwell_time: empty sequence");
    DwellStats st;
    st.per_state_mean.assign(static_cast<std::size_t>(n_states), 0.0);
    st.per_state_runs.assign(static_cast<std::size_t>(n_states), 0);
    std::vector<double> total_len(static_cast<std::size_t>(n_states), 0.0);
    std::size_t i = 0;
    while (i < labels.size()) {
        const int state = labels[i];
        if (state < 1 || state > n_states)
            throw data_error("mean_dwell_time: label " + std::to_string(state) + " out of range");
        std::size_t j = i;
        while (j < labels.size() && labels[j] == state) ++j;
        const auto s = static_cast<std::size_t>(state - 1);
        total_len[s] += static_cast<double>(j - i);
        ++st.per_state_runs[s];
        ++st.total_runs;
        i = j;
    }
    for (int s = 0; s < n_states; ++s) {
        const auto ss = static_cast<std::size_t>(s);
        if (st.per_state_runs[ss] > 0) st.per_state_mean[ss] = total_len[ss] / st.per_state_runs[ss];
    }
    st.overall_mean = static_cast<double>(labels.size()) / static_cast<double>(st.total_runs);
    return st;
}

inline DwellStats mean_dwell_time(const sim::StateSequence& seq, int n_states) {
    return mean_dwell_time(std::span<const int>(seq.labels), n_states);
}

inline std::vector<double> occupancy_rate(std::span<const int> labels, int n_states) {
    if (labels.empty()) throw data_error("occupancy_rate: empty sequence");
    std::vector<double> occ(static_cast<std::size_t>(n_states), 0.0);
    for (int label : labels) {
        if (label < 1 || label > n_states)
            throw data_error("occupancy_rate: label " + std::to_string(label) + " out of range");
        occ[static_cast<std::size_t>(label - 1)] += 1.0;
    }
    for (double& v : occ) v /= static_cast<double>(labels.size());
    return occ;
}

inline std::vector<double> occupancy_rate(const sim::StateSequence& seq, int n_states) {
    return occupancy_rate(std::span<const int>(seq.labels), n_states);
}

// Number of entries with |r| >= threshold across all samples.
inline std::uint64_t strong_correlation_count(const std::vector<sim::CorrelationSample>& samples,
                                              double threshold) {
    if (threshold < 0.0 || threshold > 1.0)
        throw config_error("strong_correlation_count: threshold must be in [0, 1]");
    std::uint64_t count = 0;
    for (const sim::CorrelationSample& s : samples)
        for (double v : s.vec)
            if (std::abs(v) >= threshold) ++count;
    return count;
}

}  // namespace tgmvae::metrics
