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
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tgmvae/errors.hpp"
#include "tgmvae/matrix.hpp"
#include "tgmvae/rng.hpp"

namespace tgmvae::sim {

// Row-stochastic transition matrix over n states; states 1..n_major are the
// major ones and receive the larger Dirichlet concentration.
struct TransitionMatrix {
    nd::Matrix p;  // n x n, rows sum to 1
    int n_major = 0;
};

struct StateSequence {
    std::vector<int> labels;  // 1-based state ids
    int n_major = 0;
};

// Rank-1 ground-truth connectivity pattern c = u * u^T with u in {-1,0,1}^R.
struct CommunityMatrix {
    std::vector<double> loading;  // u
    nd::Matrix c;                 // R x R
};

// Strict upper triangle of one windowed correlation matrix, row-major order.
struct CorrelationSample {
    std::vector<double> vec;  // length R(R-1)/2, entries in [-1, 1]
    int window_center = 0;    // time index of the window center
};

inline std::vector<double> dirichlet_draw(std::span<const double> conc, std::mt19937_64& rng) {
    std::vector<double> g(conc.size());
    double s = 0.0;
    for (std::size_t i = 0; i < conc.size(); ++i) {
        std::gamma_distribution<double> gamma(conc[i], 1.0);
        g[i] = gamma(rng);
        s += g[i];
    }
    for (double& v : g) v /= s;
    return g;
}

// Row i is 0.9*delta_ij + 0.1*b_i with b_i ~ Dir(10,...,10,1,...,1), the
// first n_major concentrations being 10.
inline TransitionMatrix sample_transition_matrix(int n_states, int n_major, std::uint64_t seed) {
    if (n_major < 1 || n_major > n_states)
        throw config_error("sample_transition_matrix: need 1 <= n_major <= n_states");
    auto rng = make_rng(seed, "transition");
    std::vector<double> conc(static_cast<std::size_t>(n_states), 1.0);
    for (int i = 0; i < n_major; ++i) conc[static_cast<std::size_t>(i)] = 10.0;
    TransitionMatrix t;
    t.n_major = n_major;
    t.p = nd::Matrix(static_cast<std::size_t>(n_states), static_cast<std::size_t>(n_states));
    for (int i = 0; i < n_states; ++i) {
        const std::vector<double> b = dirichlet_draw(conc, rng);
        for (int j = 0; j < n_states; ++j)
            t.p(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
                (i == j ? 0.9 : 0.0) + 0.1 * b[static_cast<std::size_t>(j)];
    }
    return t;
}

// Markov chain from a uniformly drawn initial state.
inline StateSequence sample_state_sequence(const TransitionMatrix& t, int t_points, std::uint64_t seed) {
    if (t_points < 1) throw config_error("sample_state_sequence: T must be >= 1");
    const int n = static_cast<int>(t.p.rows());
    auto rng = make_rng(seed, "sequence");
    StateSequence seq;
    seq.n_major = t.n_major;
    seq.labels.resize(static_cast<std::size_t>(t_points));
    std::uniform_int_distribution<int> init(1, n);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int state = init(rng);
    seq.labels[0] = state;
    for (int i = 1; i < t_points; ++i) {
        const double r = u(rng);
        const double* row = t.p.row(static_cast<std::size_t>(state - 1));
        double acc = 0.0;
        int next = n;
        for (int j = 0; j < n; ++j) {
            acc += row[static_cast<std::size_t>(j)];
            if (r <= acc) {
                next = j + 1;
                break;
            }
        }
        state = next;
        seq.labels[static_cast<std::size_t>(i)] = state;
    }
    return seq;
}

inline CommunityMatrix community_from_loading(std::vector<double> u) {
    if (u.size() < 2) throw data_error("community_from_loading: need at least 2 ROIs");
    CommunityMatrix cm;
    cm.c = nd::Matrix(u.size(), u.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = 0; j < u.size(); ++j) cm.c(i, j) = u[i] * u[j];
    cm.loading = std::move(u);
    return cm;
}

// Loading vectors are i.i.d. uniform over {-1,0,1}; all-zero vectors and
// vectors equal to an earlier state's up to sign are re-drawn so every state
// stays distinguishable.
inline std::vector<CommunityMatrix> make_community_matrices(int n_states, int n_roi, std::uint64_t seed) {
    if (n_roi < 2) throw config_error("make_community_matrices: need n_roi >= 2");
    auto rng = make_rng(seed, "community");
    std::uniform_int_distribution<int> tri(-1, 1);
    std::vector<CommunityMatrix> out;
    out.reserve(static_cast<std::size_t>(n_states));
    const int max_attempts = 100000;
    for (int s = 0; s < n_states; ++s) {
        std::vector<double> u(static_cast<std::size_t>(n_roi));
        bool ok = false;
        for (int attempt = 0; attempt < max_attempts && !ok; ++attempt) {
            bool all_zero = true;
            for (double& v : u) {
                v = static_cast<double>(tri(rng));
                if (v != 0.0) all_zero = false;
            }
            if (all_zero) continue;
            ok = true;
            for (const CommunityMatrix& prev : out) {
                bool same = true, flipped = true;
                for (std::size_t j = 0; j < u.size(); ++j) {
                    if (u[j] != prev.loading[j]) same = false;
                    if (u[j] != -prev.loading[j]) flipped = false;
                }
                if (same || flipped) {
                    ok = false;
                    break;
                }
            }
        }
        if (!ok)
            throw data_error("make_community_matrices: could not draw " + std::to_string(n_states) +
                             " distinct loading vectors for n_roi=" + std::to_string(n_roi));
        out.push_back(community_from_loading(std::move(u)));
    }
    return out;
}

// x_t = u_{s_t} * g_t + eta_t with g_t ~ N(0,1) and eta_t ~ N(0, noise_std^2 I).
// The scalar-factor construction realizes N(0, u u^T) exactly even though the
// community matrix is singular.
inline nd::Matrix synthesize_signals(const StateSequence& seq, const std::vector<CommunityMatrix>& communities,
                                     double noise_std, std::uint64_t seed) {
    if (communities.empty()) throw data_error("synthesize_signals: no community matrices");
    const std::size_t r = communities.front().loading.size();
    for (int label : seq.labels)
        if (label < 1 || static_cast<std::size_t>(label) > communities.size())
            throw data_error("synthesize_signals: state " + std::to_string(label) + " has no community matrix");
    auto rng = make_rng(seed, "signals");
    std::normal_distribution<double> normal(0.0, 1.0);
    nd::Matrix series(seq.labels.size(), r);
    for (std::size_t t = 0; t < seq.labels.size(); ++t) {
        const std::vector<double>& u = communities[static_cast<std::size_t>(seq.labels[t] - 1)].loading;
        const double shared = normal(rng);
        double* row = series.row(t);
        for (std::size_t j = 0; j < r; ++j) row[j] = u[j] * shared + noise_std * normal(rng);
    }
    return series;
}

// Oracle-approximating shrinkage intensity toward (trace/p) * I for a sample
// covariance estimated from n observations.
inline double oas_intensity(const nd::Matrix& cov, int n_samples) {
    const auto p = static_cast<double>(cov.rows());
    double tr = 0.0, tr2 = 0.0;
    for (std::size_t i = 0; i < cov.rows(); ++i) {
        tr += cov(i, i);
        for (std::size_t j = 0; j < cov.cols(); ++j) tr2 += cov(i, j) * cov(i, j);
    }
    const double num = (1.0 - 2.0 / p) * tr2 + tr * tr;
    const double den = (static_cast<double>(n_samples) + 1.0 - 2.0 / p) * (tr2 - tr * tr / p);
    if (den <= 0.0) return 1.0;
    return std::clamp(num / den, 0.0, 1.0);
}

// Stride-1 sliding windows; per window the sample covariance (optionally OAS
// shrunk toward (trace/R) * I) is converted to a correlation matrix and its
// strict upper triangle extracted. Channels with zero variance inside a
// window contribute zero correlations.
inline std::vector<CorrelationSample> sliding_window_correlations(const nd::Matrix& series, int w, bool shrinkage) {
    const int t_points = static_cast<int>(series.rows());
    const std::size_t r = series.cols();
    if (w < 3) throw config_error("sliding_window_correlations: window length must be >= 3");
    if (t_points < w) throw data_error("sliding_window_correlations: series shorter than window");

    std::vector<CorrelationSample> out;
    out.reserve(static_cast<std::size_t>(t_points - w + 1));
    std::vector<double> mean(r);
    nd::Matrix cov(r, r);
    std::vector<double> inv_sd(r);

    for (int start = 0; start + w <= t_points; ++start) {
        std::fill(mean.begin(), mean.end(), 0.0);
        for (int t = start; t < start + w; ++t) {
            const double* row = series.row(static_cast<std::size_t>(t));
            for (std::size_t j = 0; j < r; ++j) mean[j] += row[j];
        }
        for (std::size_t j = 0; j < r; ++j) mean[j] /= w;

        cov.fill(0.0);
        for (int t = start; t < start + w; ++t) {
            const double* row = series.row(static_cast<std::size_t>(t));
            for (std::size_t i = 0; i < r; ++i) {
                const double di = row[i] - mean[i];
                double* ci = cov.row(i);
                for (std::size_t j = i; j < r; ++j) ci[j] += di * (row[j] - mean[j]);
            }
        }
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = i; j < r; ++j) {
                cov(i, j) /= w;
                cov(j, i) = cov(i, j);
            }

        if (shrinkage) {
            const double rho = oas_intensity(cov, w);
            double tr = 0.0;
            for (std::size_t i = 0; i < r; ++i) tr += cov(i, i);
            const double target = tr / static_cast<double>(r);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < r; ++j)
                    cov(i, j) = (1.0 - rho) * cov(i, j) + (i == j ? rho * target : 0.0);
        }

        for (std::size_t i = 0; i < r; ++i)
            inv_sd[i] = cov(i, i) > 0.0 ? 1.0 / std::sqrt(cov(i, i)) : 0.0;

        CorrelationSample s;
        s.window_center = start + w / 2;
        s.vec.reserve(r * (r - 1) / 2);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = i + 1; j < r; ++j)
                s.vec.push_back(std::clamp(cov(i, j) * inv_sd[i] * inv_sd[j], -1.0, 1.0));
        out.push_back(std::move(s));
    }
    return out;
}

// Number of ROIs whose strict upper triangle has the given length.
inline std::size_t roi_from_upper_dim(std::size_t dim) {
    // R(R-1)/2 = dim
    const auto r = static_cast<std::size_t>(std::llround((1.0 + std::sqrt(1.0 + 8.0 * static_cast<double>(dim))) / 2.0));
    if (r < 2 || r * (r - 1) / 2 != dim)
        throw data_error("roi_from_upper_dim: " + std::to_string(dim) + " is not a strict upper-triangle length");
    return r;
}

// Symmetric matrix reconstructed from a strict upper triangle (row-major)
// with a constant diagonal.
inline nd::Matrix full_from_upper(std::span<const double> vec, std::size_t n_roi, double diagonal = 1.0) {
    if (vec.size() != n_roi * (n_roi - 1) / 2) throw data_error("full_from_upper: length mismatch");
    nd::Matrix m(n_roi, n_roi);
    std::size_t at = 0;
    for (std::size_t i = 0; i < n_roi; ++i) {
        m(i, i) = diagonal;
        for (std::size_t j = i + 1; j < n_roi; ++j) {
            m(i, j) = vec[at];
            m(j, i) = vec[at];
            ++at;
        }
    }
    return m;
}

// Window label = majority state inside the window; ties resolve to the state
// at the window center.
inline StateSequence ground_truth_window_labels(const StateSequence& seq, int w) {
    const int t_points = static_cast<int>(seq.labels.size());
    if (w < 3) throw config_error("ground_truth_window_labels: window length must be >= 3");
    if (t_points < w) throw data_error("ground_truth_window_labels: sequence shorter than window");
    StateSequence out;
    out.n_major = seq.n_major;
    out.labels.reserve(static_cast<std::size_t>(t_points - w + 1));
    std::map<int, int> counts;
    for (int start = 0; start + w <= t_points; ++start) {
        counts.clear();
        for (int t = start; t < start + w; ++t) ++counts[seq.labels[static_cast<std::size_t>(t)]];
        int best_state = 0, best_count = -1;
        bool tie = false;
        for (const auto& [state, count] : counts) {
            if (count > best_count) {
                best_count = count;
                best_state = state;
                tie = false;
            } else if (count == best_count) {
                tie = true;
            }
        }
        if (tie) {
            const int center = seq.labels[static_cast<std::size_t>(start + w / 2)];
            if (counts[center] == best_count) best_state = center;
            // otherwise keep the smallest state id with the majority count
        }
        out.labels.push_back(best_state);
    }
    return out;
}

}  // namespace tgmvae::sim
