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
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tgmvae/errors.hpp"
#include "tgmvae/matrix.hpp"
#include "tgmvae/rng.hpp"

namespace tgmvae::mix {

// KL( N(mu_a, I) || N(mu_b, I) ) = 1/2 ||mu_a - mu_b||^2.
inline double kl_identity_gaussians(std::span<const double> mu_a, std::span<const double> mu_b) {
    if (mu_a.size() != mu_b.size())
        throw data_error("kl_identity_gaussians: dimension mismatch (" + std::to_string(mu_a.size()) +
                         " vs " + std::to_string(mu_b.size()) + ")");
    double s = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double d = mu_a[i] - mu_b[i];
        s += d * d;
    }
    return 0.5 * s;
}

inline void check_simplex(std::span<const double> v, const char* what, double tol = 1e-9) {
    double s = 0.0;
    for (double x : v) {
        if (x < -tol) throw data_error(std::string(what) + ": negative entry");
        s += x;
    }
    if (std::abs(s - 1.0) > tol)
        throw data_error(std::string(what) + ": entries sum to " + std::to_string(s) + ", not 1");
}

// Sum_i q_i log(q_i / p_i) with the 0*log(0) = 0 convention.
inline double kl_categorical(std::span<const double> q, std::span<const double> p) {
    if (q.size() != p.size()) throw data_error("kl_categorical: dimension mismatch");
    check_simplex(q, "kl_categorical: q");
    check_simplex(p, "kl_categorical: p");
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] <= 0.0) continue;
        if (p[i] <= 0.0) throw numeric_error("kl_categorical: infinite KL (q > 0 where p = 0)");
        s += q[i] * std::log(q[i] / p[i]);
    }
    return s;
}

struct DirichletPrior {
    double alpha = 1.0;  // concentration of each major cluster
    double beta = 1.1;   // concentration of the remainder
};

// log Dirichlet density of pi under the given concentration vector.
inline double dirichlet_log_density(std::span<const double> pi, std::span<const double> conc) {
    if (pi.size() != conc.size()) throw data_error("dirichlet_log_density: dimension mismatch");
    if (pi.empty()) throw data_error("dirichlet_log_density: empty simplex");
    check_simplex(pi, "dirichlet_log_density: pi");
    double conc_sum = 0.0;
    double v = 0.0;
    for (std::size_t i = 0; i < pi.size(); ++i) {
        if (conc[i] <= 0.0) throw config_error("dirichlet_log_density: non-positive concentration");
        if (pi[i] <= 0.0) throw data_error("dirichlet_log_density: pi must be strictly positive");
        conc_sum += conc[i];
        v += (conc[i] - 1.0) * std::log(pi[i]) - std::lgamma(conc[i]);
    }
    return v + std::lgamma(conc_sum);
}

// Concentrations (alpha, ..., alpha, beta) over the K-simplex.
inline double dirichlet_log_density(std::span<const double> pi, const DirichletPrior& prior) {
    std::vector<double> conc(pi.size(), prior.alpha);
    if (!conc.empty()) conc.back() = prior.beta;
    return dirichlet_log_density(pi, conc);
}

struct KMeansResult {
    nd::Matrix centers;       // k x d
    std::vector<int> labels;  // 0-based center index per point
    int iterations = 0;
};

namespace detail {

inline double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double t = a[j] - b[j];
        s += t * t;
    }
    return s;
}

inline std::size_t count_distinct_rows(const nd::Matrix& pts) {
    std::vector<std::size_t> order(pts.rows());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t d = pts.cols();
    auto less = [&](std::size_t a, std::size_t b) {
        const double* ra = pts.row(a);
        const double* rb = pts.row(b);
        for (std::size_t j = 0; j < d; ++j) {
            if (ra[j] < rb[j]) return true;
            if (ra[j] > rb[j]) return false;
        }
        return false;
    };
    std::sort(order.begin(), order.end(), less);
    std::size_t distinct = order.empty() ? 0 : 1;
    for (std::size_t i = 1; i < order.size(); ++i)
        if (less(order[i - 1], order[i])) ++distinct;
    return distinct;
}

}  // namespace detail

// Lloyd iterations with k-means++ seeding; deterministic per seed. Empty
// clusters are re-seeded with the point farthest from its assigned center.
inline KMeansResult kmeans(const nd::Matrix& points, int k, std::uint64_t seed, int max_iter = 100) {
    const std::size_t n = points.rows();
    const std::size_t d = points.cols();
    if (n == 0) throw data_error("kmeans: empty input");
    if (k < 1) throw config_error("kmeans: k must be >= 1");
    if (static_cast<std::size_t>(k) > n) throw data_error("kmeans: k exceeds number of points");
    if (static_cast<std::size_t>(k) > detail::count_distinct_rows(points))
        throw data_error("kmeans: k exceeds number of distinct points");

    auto rng = make_rng(seed, "kmeans");
    nd::Matrix centers(static_cast<std::size_t>(k), d);
    std::vector<double> dist2(n);

    // k-means++ seeding
    {
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        const std::size_t first = pick(rng);
        for (std::size_t j = 0; j < d; ++j) centers(0, j) = points(first, j);
        for (std::size_t i = 0; i < n; ++i) dist2[i] = detail::sq_dist(points.row(i), centers.row(0), d);
        for (int c = 1; c < k; ++c) {
            double total = 0.0;
            for (double v : dist2) total += v;
            std::size_t chosen = 0;
            if (total > 0.0) {
                std::uniform_real_distribution<double> u(0.0, total);
                double target = u(rng);
                double acc = 0.0;
                chosen = n - 1;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += dist2[i];
                    if (target <= acc) {
                        chosen = i;
                        break;
                    }
                }
            } else {
                chosen = pick(rng);
            }
            for (std::size_t j = 0; j < d; ++j) centers(static_cast<std::size_t>(c), j) = points(chosen, j);
            for (std::size_t i = 0; i < n; ++i)
                dist2[i] = std::min(dist2[i], detail::sq_dist(points.row(i), centers.row(static_cast<std::size_t>(c)), d));
        }
    }

    std::vector<int> labels(n, 0);
    std::vector<std::size_t> counts(static_cast<std::size_t>(k));
    int iter = 0;
    for (; iter < max_iter; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = detail::sq_dist(points.row(i), centers.row(0), d);
            for (int c = 1; c < k; ++c) {
                const double dd = detail::sq_dist(points.row(i), centers.row(static_cast<std::size_t>(c)), d);
                if (dd < bd) {
                    bd = dd;
                    best = c;
                }
            }
            dist2[i] = bd;
            if (labels[i] != best) {
                labels[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;

        centers.fill(0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            double* cr = centers.row(static_cast<std::size_t>(labels[i]));
            const double* pr = points.row(i);
            for (std::size_t j = 0; j < d; ++j) cr[j] += pr[j];
            ++counts[static_cast<std::size_t>(labels[i])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] == 0) {
                // re-seed from the worst-fit point
                std::size_t far = 0;
                double best = -1.0;
                for (std::size_t i = 0; i < n; ++i)
                    if (dist2[i] > best) {
                        best = dist2[i];
                        far = i;
                    }
                for (std::size_t j = 0; j < d; ++j) centers(static_cast<std::size_t>(c), j) = points(far, j);
            } else {
                double* cr = centers.row(static_cast<std::size_t>(c));
                const double inv = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(c)]);
                for (std::size_t j = 0; j < d; ++j) cr[j] *= inv;
            }
        }
    }

    // final assignment so labels match returned centers
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        double bd = detail::sq_dist(points.row(i), centers.row(0), d);
        for (int c = 1; c < k; ++c) {
            const double dd = detail::sq_dist(points.row(i), centers.row(static_cast<std::size_t>(c)), d);
            if (dd < bd) {
                bd = dd;
                best = c;
            }
        }
        labels[i] = best;
    }
    return {std::move(centers), std::move(labels), iter};
}

struct DiagGmm {
    int n_components = 0;
    std::vector<double> weights;  // simplex, length K
    nd::Matrix means;             // K x d
    nd::Matrix variances;         // K x d, floored
};

struct GmmConfig {
    int max_iter = 200;
    double tol = 1e-6;             // stop when avg log-likelihood gain drops below
    double variance_floor = 1e-6;
    double weight_floor = 1e-8;    // below this a component is considered collapsed
    int max_reseeds = 3;
};

struct GmmFit {
    DiagGmm model;
    std::vector<double> avg_log_likelihood;  // per EM iteration
    int iterations = 0;
};

// Posterior component responsibilities for one point.
inline std::vector<double> gmm_predict(const DiagGmm& g, std::span<const double> x) {
    const std::size_t d = g.means.cols();
    if (x.size() != d) throw data_error("gmm_predict: dimension mismatch");
    const int k = g.n_components;
    std::vector<double> lw(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        const double* m = g.means.row(static_cast<std::size_t>(c));
        const double* v = g.variances.row(static_cast<std::size_t>(c));
        double lp = std::log(g.weights[static_cast<std::size_t>(c)]);
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = x[j] - m[j];
            lp -= 0.5 * (std::log(2.0 * std::numbers::pi * v[j]) + diff * diff / v[j]);
        }
        lw[static_cast<std::size_t>(c)] = lp;
    }
    double mx = lw[0];
    for (double v : lw) mx = std::max(mx, v);
    double s = 0.0;
    for (double& v : lw) {
        v = std::exp(v - mx);
        s += v;
    }
    for (double& v : lw) v /= s;
    return lw;
}

// Diagonal-covariance Gaussian mixture fitted by EM, initialized from
// k-means. The recorded history is the average per-point log-likelihood.
inline GmmFit gmm_em_fit(const nd::Matrix& points, int k, std::uint64_t seed, GmmConfig cfg = {}) {
    const std::size_t n = points.rows();
    const std::size_t d = points.cols();
    if (n == 0) throw data_error("gmm_em_fit: empty input");
    if (k < 1) throw config_error("gmm_em_fit: K must be >= 1");

    DiagGmm g;
    g.n_components = k;
    g.weights.assign(static_cast<std::size_t>(k), 1.0 / k);
    g.means = nd::Matrix(static_cast<std::size_t>(k), d);
    g.variances = nd::Matrix(static_cast<std::size_t>(k), d, 1.0);

    std::vector<double> global_var(d, 0.0);
    {
        std::vector<double> mean(d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) mean[j] += points(i, j);
        for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const double t = points(i, j) - mean[j];
                global_var[j] += t * t;
            }
        for (std::size_t j = 0; j < d; ++j)
            global_var[j] = std::max(global_var[j] / static_cast<double>(n), cfg.variance_floor);
    }

    {
        KMeansResult km = kmeans(points, k, seed);
        g.means = km.centers;
        std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
        nd::Matrix ssd(static_cast<std::size_t>(k), d);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(km.labels[i]);
            ++counts[c];
            for (std::size_t j = 0; j < d; ++j) {
                const double t = points(i, j) - g.means(c, j);
                ssd(c, j) += t * t;
            }
        }
        for (int c = 0; c < k; ++c) {
            const auto cc = static_cast<std::size_t>(c);
            g.weights[cc] = std::max(static_cast<double>(counts[cc]) / static_cast<double>(n), cfg.weight_floor);
            for (std::size_t j = 0; j < d; ++j)
                g.variances(cc, j) = counts[cc] > 0
                                         ? std::max(ssd(cc, j) / static_cast<double>(counts[cc]), cfg.variance_floor)
                                         : global_var[j];
        }
        double ws = 0.0;
        for (double w : g.weights) ws += w;
        for (double& w : g.weights) w /= ws;
    }

    auto reseed_rng = make_rng(seed, "gmm-reseed");
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    int reseeds = 0;

    GmmFit fit;
    nd::Matrix resp(n, static_cast<std::size_t>(k));
    std::vector<double> log_norm(static_cast<std::size_t>(k));
    double prev_avg_ll = -std::numeric_limits<double>::infinity();

    int iter = 0;
    for (; iter < cfg.max_iter; ++iter) {
        // E-step
        for (int c = 0; c < k; ++c) {
            const auto cc = static_cast<std::size_t>(c);
            double ln = std::log(g.weights[cc]);
            for (std::size_t j = 0; j < d; ++j) ln -= 0.5 * std::log(2.0 * std::numbers::pi * g.variances(cc, j));
            log_norm[cc] = ln;
        }
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double* ri = resp.row(i);
            const double* xi = points.row(i);
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const auto cc = static_cast<std::size_t>(c);
                const double* m = g.means.row(cc);
                const double* v = g.variances.row(cc);
                double lp = log_norm[cc];
                for (std::size_t j = 0; j < d; ++j) {
                    const double t = xi[j] - m[j];
                    lp -= 0.5 * t * t / v[j];
                }
                ri[cc] = lp;
                mx = std::max(mx, lp);
            }
            double s = 0.0;
            for (int c = 0; c < k; ++c) {
                auto& r = ri[static_cast<std::size_t>(c)];
                r = std::exp(r - mx);
                s += r;
            }
            for (int c = 0; c < k; ++c) ri[static_cast<std::size_t>(c)] /= s;
            ll += mx + std::log(s);
        }
        const double avg_ll = ll / static_cast<double>(n);
        fit.avg_log_likelihood.push_back(avg_ll);

        if (std::abs(avg_ll - prev_avg_ll) < cfg.tol) {
            ++iter;
            break;
        }
        prev_avg_ll = avg_ll;

        // M-step (point-major accumulation keeps the access row-contiguous)
        std::vector<double> nk(static_cast<std::size_t>(k), 0.0);
        nd::Matrix mean_acc(static_cast<std::size_t>(k), d);
        nd::Matrix var_acc(static_cast<std::size_t>(k), d);
        for (std::size_t i = 0; i < n; ++i) {
            const double* ri = resp.row(i);
            const double* xi = points.row(i);
            for (int c = 0; c < k; ++c) {
                const auto cc = static_cast<std::size_t>(c);
                const double w = ri[cc];
                nk[cc] += w;
                double* ma = mean_acc.row(cc);
                for (std::size_t j = 0; j < d; ++j) ma[j] += w * xi[j];
            }
        }
        for (int c = 0; c < k; ++c) {
            const auto cc = static_cast<std::size_t>(c);
            if (nk[cc] > 0.0) {
                double* ma = mean_acc.row(cc);
                for (std::size_t j = 0; j < d; ++j) ma[j] /= nk[cc];
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double* ri = resp.row(i);
            const double* xi = points.row(i);
            for (int c = 0; c < k; ++c) {
                const auto cc = static_cast<std::size_t>(c);
                const double w = ri[cc];
                const double* ma = mean_acc.row(cc);
                double* va = var_acc.row(cc);
                for (std::size_t j = 0; j < d; ++j) {
                    const double t = xi[j] - ma[j];
                    va[j] += w * t * t;
                }
            }
        }
        bool reseeded = false;
        for (int c = 0; c < k; ++c) {
            const auto cc = static_cast<std::size_t>(c);
            if (nk[cc] / static_cast<double>(n) < cfg.weight_floor) {
                if (++reseeds > cfg.max_reseeds)
                    throw numeric_error("gmm_em_fit: component " + std::to_string(c) +
                                        " collapsed more than " + std::to_string(cfg.max_reseeds) + " times");
                const std::size_t p = pick(reseed_rng);
                for (std::size_t j = 0; j < d; ++j) {
                    g.means(cc, j) = points(p, j);
                    g.variances(cc, j) = global_var[j];
                }
                g.weights[cc] = 1.0 / static_cast<double>(n);
                reseeded = true;
                continue;
            }
            g.weights[cc] = nk[cc] / static_cast<double>(n);
            for (std::size_t j = 0; j < d; ++j) {
                g.means(cc, j) = mean_acc(cc, j);
                g.variances(cc, j) = std::max(var_acc(cc, j) / nk[cc], cfg.variance_floor);
            }
        }
        if (reseeded) {
            double ws = 0.0;
            for (double w : g.weights) ws += w;
            for (double& w : g.weights) w /= ws;
            prev_avg_ll = -std::numeric_limits<double>::infinity();
        }
    }

    fit.model = std::move(g);
    fit.iterations = iter;
    return fit;
}

}  // namespace tgmvae::mix
