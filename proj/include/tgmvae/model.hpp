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
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tgmvae/adam.hpp"
#include "tgmvae/autodiff.hpp"
#include "tgmvae/errors.hpp"
#include "tgmvae/matrix.hpp"
#include "tgmvae/mixmath.hpp"
#include "tgmvae/rng.hpp"

namespace tgmvae {

enum class ReconLoss { Gaussian, Bce };

inline std::string recon_loss_name(ReconLoss r) { return r == ReconLoss::Gaussian ? "gaussian" : "bce"; }

// Largest power of two strictly below d.
inline int leading_pow2_below(int d) {
    int p = 1;
    while (p * 2 < d) p *= 2;
    return p;
}

// Hyperparameters and training settings. K counts the K-1 major clusters
// plus the remainder class; gamma is the remainder prior; lambda weights the
// Bernoulli KL regularizer; sigma_x scales the Gaussian reconstruction term.
struct ModelConfig {
    int input_dim = 0;
    std::array<int, 3> encoder_dims{0, 0, 0};  // (h1, h2, latent); zeros = derive from input_dim
    int k_classes = 6;
    double gamma = 0.075;
    double lambda = 200.0;
    double sigma_x = 1.0;
    double alpha = 1.0;
    double beta = 1.1;
    ReconLoss recon_loss = ReconLoss::Gaussian;
    int epochs = 100;
    int batch_size = 256;
    int pretrain_epochs = 20;
    std::uint64_t seed = 1;

    int latent_dim() const { return encoder_dims[2]; }
    bool dims_set() const { return encoder_dims[0] > 0 && encoder_dims[1] > 0 && encoder_dims[2] > 0; }

    // Fill unset encoder dims as (D, 16, 3) with D the leading power of two
    // below the input dimension.
    void resolve_dims() {
        if (!dims_set()) {
            if (input_dim < 2) throw config_error("config: input_dim must be >= 2 to derive encoder dims");
            encoder_dims = {leading_pow2_below(input_dim), 16, 3};
        }
    }

    void validate() const {
        if (input_dim < 1) throw config_error("config: input_dim must be positive");
        if (!dims_set()) throw config_error("config: encoder_dims must be positive");
        if (k_classes < 2) throw config_error("config: K must be >= 2");
        if (gamma < 0.0 || gamma >= 1.0) throw config_error("config: gamma must lie in [0, 1)");
        if (lambda <= 0.0) throw config_error("config: lambda must be positive");
        if (sigma_x <= 0.0) throw config_error("config: sigma_x must be positive");
        if (alpha <= 0.0) throw config_error("config: alpha must be positive");
        if (beta <= 0.0) throw config_error("config: beta must be positive");
        if (epochs < 0 || pretrain_epochs < 0) throw config_error("config: epoch counts must be >= 0");
        if (batch_size < 1) throw config_error("config: batch_size must be >= 1");
    }
};

// All learnable tensors. The visitation order of for_each is fixed and is
// also the checkpoint serialization order.
struct ModelParams {
    nd::Matrix enc_w1, enc_b1, enc_w2, enc_b2, enc_w3, enc_b3;
    nd::Matrix dec_w1, dec_b1, dec_w2, dec_b2, dec_w3, dec_b3;
    nd::Matrix head_b_w, head_b_b;  // q(b|x) head on the 2nd hidden layer
    nd::Matrix head_m_w, head_m_b;  // q(m|x,b0) head on the 2nd hidden layer
    nd::Matrix cluster_means;       // (K-1) x latent
    nd::Matrix psi_logits;          // 1 x (K-1)

    template <typename F>
    void for_each(F&& f) {
        f("enc_w1", enc_w1); f("enc_b1", enc_b1);
        f("enc_w2", enc_w2); f("enc_b2", enc_b2);
        f("enc_w3", enc_w3); f("enc_b3", enc_b3);
        f("dec_w1", dec_w1); f("dec_b1", dec_b1);
        f("dec_w2", dec_w2); f("dec_b2", dec_b2);
        f("dec_w3", dec_w3); f("dec_b3", dec_b3);
        f("head_b_w", head_b_w); f("head_b_b", head_b_b);
        f("head_m_w", head_m_w); f("head_m_b", head_m_b);
        f("cluster_means", cluster_means);
        f("psi_logits", psi_logits);
    }

    template <typename F>
    void for_each(F&& f) const {
        const_cast<ModelParams*>(this)->for_each([&](const char* n, nd::Matrix& m) { f(n, static_cast<const nd::Matrix&>(m)); });
    }

    nd::Matrix* find(std::string_view name) {
        nd::Matrix* out = nullptr;
        for_each([&](const char* n, nd::Matrix& m) {
            if (name == n) out = &m;
        });
        return out;
    }

    const nd::Matrix* find(std::string_view name) const {
        return const_cast<ModelParams*>(this)->find(name);
    }

    // Zero-valued tensors with the shapes implied by the config.
    static ModelParams shaped(const ModelConfig& cfg) {
        const auto d_in = static_cast<std::size_t>(cfg.input_dim);
        const auto h1 = static_cast<std::size_t>(cfg.encoder_dims[0]);
        const auto h2 = static_cast<std::size_t>(cfg.encoder_dims[1]);
        const auto d = static_cast<std::size_t>(cfg.encoder_dims[2]);
        const auto km = static_cast<std::size_t>(cfg.k_classes - 1);
        ModelParams p;
        p.enc_w1 = nd::Matrix(d_in, h1); p.enc_b1 = nd::Matrix(1, h1);
        p.enc_w2 = nd::Matrix(h1, h2);   p.enc_b2 = nd::Matrix(1, h2);
        p.enc_w3 = nd::Matrix(h2, d);    p.enc_b3 = nd::Matrix(1, d);
        p.dec_w1 = nd::Matrix(d, h2);    p.dec_b1 = nd::Matrix(1, h2);
        p.dec_w2 = nd::Matrix(h2, h1);   p.dec_b2 = nd::Matrix(1, h1);
        p.dec_w3 = nd::Matrix(h1, d_in); p.dec_b3 = nd::Matrix(1, d_in);
        p.head_b_w = nd::Matrix(h2, 2);  p.head_b_b = nd::Matrix(1, 2);
        p.head_m_w = nd::Matrix(h2, km); p.head_m_b = nd::Matrix(1, km);
        p.cluster_means = nd::Matrix(km, d);
        p.psi_logits = nd::Matrix(1, km);
        return p;
    }

    bool all_finite() const {
        bool ok = true;
        for_each([&](const char*, const nd::Matrix& m) { ok = ok && m.all_finite(); });
        return ok;
    }
};

struct PosteriorOutput {
    std::vector<double> mu;      // latent mean of q(z|x) = N(mu, I)
    std::array<double, 2> q_b;   // (inlier, outlier)
    std::vector<double> q_m;     // (K-1)-simplex
    std::vector<double> q_c;     // K-simplex assembled as q_c[k] = q_m[k] * q_b[0], q_c[K] = q_b[1]
};

struct LossBreakdown {
    double recon = 0.0;
    double kl_gauss = 0.0;
    double kl_cat = 0.0;
    double kl_bern = 0.0;
    double dir_prior = 0.0;
    double total = 0.0;
};

// Glorot-uniform affine weights, zero biases, cluster means 0.1 * N(0, 1),
// zero psi logits (uniform mixing prior).
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams p = ModelParams::shaped(cfg);
    auto rng = make_rng(seed, "init");
    auto glorot = [&rng](nd::Matrix& w) {
        const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    };
    glorot(p.enc_w1); glorot(p.enc_w2); glorot(p.enc_w3);
    glorot(p.dec_w1); glorot(p.dec_w2); glorot(p.dec_w3);
    glorot(p.head_b_w); glorot(p.head_m_w);
    auto mu_rng = make_rng(seed, "init-mu");
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < p.cluster_means.size(); ++i) p.cluster_means.data()[i] = 0.1 * normal(mu_rng);
    return p;
}

inline std::vector<double> softmax_vec(std::span<const double> v) {
    std::vector<double> out(v.begin(), v.end());
    double mx = out[0];
    for (double x : out) mx = std::max(mx, x);
    double s = 0.0;
    for (double& x : out) {
        x = std::exp(x - mx);
        s += x;
    }
    for (double& x : out) x /= s;
    return out;
}

inline std::vector<double> psi_simplex(const ModelParams& p) {
    return softmax_vec(std::span<const double>(p.psi_logits.data(), p.psi_logits.size()));
}

// pi_k = psi_k * (1 - gamma) for the K-1 major clusters, pi_K = gamma.
inline std::vector<double> assemble_pi(std::span<const double> psi, double gamma) {
    mix::check_simplex(psi, "assemble_pi: psi");
    std::vector<double> pi(psi.size() + 1);
    for (std::size_t k = 0; k < psi.size(); ++k) pi[k] = psi[k] * (1.0 - gamma);
    pi.back() = gamma;
    return pi;
}

// z = mu + eps; the posterior has identity covariance so there is no scale.
inline std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> eps) {
    if (mu.size() != eps.size()) throw data_error("reparameterize: dimension mismatch");
    std::vector<double> z(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i) z[i] = mu[i] + eps[i];
    return z;
}

namespace detail {

struct GraphParam {
    int id;
    std::string name;
};

// Encoder trunk shared by every graph: three tanh affine layers plus the two
// softmax heads on the second hidden layer.
struct EncoderNodes {
    int x = -1, h2 = -1, mu = -1, qb = -1, lqb = -1, qm = -1, lqm = -1;
};

inline EncoderNodes build_encoder(nd::Graph& g, const ModelConfig& cfg, std::size_t batch, bool with_b_head) {
    const auto d_in = static_cast<std::size_t>(cfg.input_dim);
    const auto h1s = static_cast<std::size_t>(cfg.encoder_dims[0]);
    const auto h2s = static_cast<std::size_t>(cfg.encoder_dims[1]);
    const auto ds = static_cast<std::size_t>(cfg.encoder_dims[2]);
    const auto km = static_cast<std::size_t>(cfg.k_classes - 1);

    EncoderNodes e;
    e.x = g.input("x", batch, d_in);
    const int h1 = g.tanh_(g.affine(e.x, g.param("enc_w1", d_in, h1s), g.param("enc_b1", 1, h1s)));
    e.h2 = g.tanh_(g.affine(h1, g.param("enc_w2", h1s, h2s), g.param("enc_b2", 1, h2s)));
    e.mu = g.affine(e.h2, g.param("enc_w3", h2s, ds), g.param("enc_b3", 1, ds));
    const int sm = g.affine(e.h2, g.param("head_m_w", h2s, km), g.param("head_m_b", 1, km));
    e.qm = g.softmax(sm);
    e.lqm = g.log_softmax(sm);
    if (with_b_head) {
        const int sb = g.affine(e.h2, g.param("head_b_w", h2s, 2), g.param("head_b_b", 1, 2));
        e.qb = g.softmax(sb);
        e.lqb = g.log_softmax(sb);
    }
    return e;
}

inline int build_decoder(nd::Graph& g, const ModelConfig& cfg, int z) {
    const auto d_in = static_cast<std::size_t>(cfg.input_dim);
    const auto h1s = static_cast<std::size_t>(cfg.encoder_dims[0]);
    const auto h2s = static_cast<std::size_t>(cfg.encoder_dims[1]);
    const auto ds = static_cast<std::size_t>(cfg.encoder_dims[2]);
    const int d1 = g.tanh_(g.affine(z, g.param("dec_w1", ds, h2s), g.param("dec_b1", 1, h2s)));
    const int d2 = g.tanh_(g.affine(d1, g.param("dec_w2", h2s, h1s), g.param("dec_b2", 1, h1s)));
    return g.affine(d2, g.param("dec_w3", h1s, d_in), g.param("dec_b3", 1, d_in));  // pre-activation output
}

inline void bind_params(nd::Graph& g, const ModelParams& params) {
    for (int id : g.param_ids()) {
        const nd::Matrix* m = const_cast<ModelParams&>(params).find(g.name(id));
        if (m == nullptr) throw data_error("model: no parameter tensor named '" + g.name(id) + "'");
        g.bind(id, *m);
    }
}

inline void grads_into(const nd::Graph& g, const ModelConfig& cfg, ModelParams& out) {
    out = ModelParams::shaped(cfg);
    for (int id : g.param_ids()) {
        nd::Matrix* m = out.find(g.name(id));
        if (m != nullptr) *m = g.grad(id);
    }
}

// The full Eq.-10-style training objective, negated for minimization:
//   mean_i [ q(b0|x_i) * ( recon_i + sum_k q_m[k] * 1/2 ||mu_i - mu_k||^2
//                          + KL(q_m || psi) ) + lambda * KL(q_b || Ber(gamma)) ]
//   + (-log Dir(psi | alpha)) / batch
// With gamma = 0 the Bernoulli head is left out entirely and the loss is the
// plain Gaussian-mixture VAE objective over the K-1 clusters.
struct ElboGraph {
    nd::Graph g;
    std::size_t batch = 0;
    int x = -1, eps = -1;
    int recon_mean = -1, klg_mean = -1, klcat_mean = -1, klb_mean = -1, dirp = -1, total = -1;

    static ElboGraph build(const ModelConfig& cfg, std::size_t batch) {
        cfg.validate();
        const bool with_b = cfg.gamma > 0.0;
        const auto ds = static_cast<std::size_t>(cfg.encoder_dims[2]);
        const auto km = static_cast<std::size_t>(cfg.k_classes - 1);

        ElboGraph eg;
        eg.batch = batch;
        nd::Graph& g = eg.g;
        EncoderNodes e = build_encoder(g, cfg, batch, with_b);
        eg.x = e.x;
        eg.eps = g.input("eps", batch, ds);
        const int z = g.add(e.mu, eg.eps);
        const int dec_out = build_decoder(g, cfg, z);

        int recon_rows;
        if (cfg.recon_loss == ReconLoss::Gaussian) {
            recon_rows = g.scale(g.row_sum(g.square(g.sub(dec_out, e.x))), 1.0 / (2.0 * cfg.sigma_x * cfg.sigma_x));
        } else {
            recon_rows = g.bce_logits(dec_out, e.x);
        }

        const int mu_param = g.param("cluster_means", km, ds);
        int klg_rows = -1;
        for (std::size_t k = 0; k < km; ++k) {
            const int diff = g.sub_rowvec(e.mu, g.row(mu_param, k));
            const int half_sq = g.scale(g.row_sum(g.square(diff)), 0.5);
            const int weighted = g.mul(g.col(e.qm, k), half_sq);
            klg_rows = k == 0 ? weighted : g.add(klg_rows, weighted);
        }

        const int psi = g.param("psi_logits", 1, km);
        const int lpsi = g.log_softmax(psi);
        const int klcat_rows = g.row_sum(g.mul(e.qm, g.sub_rowvec(e.lqm, lpsi)));

        const int negg_rows = g.add(g.add(recon_rows, klg_rows), klcat_rows);

        int loss_rows;
        if (with_b) {
            nd::Matrix log_prior(1, 2);
            log_prior(0, 0) = std::log(1.0 - cfg.gamma);
            log_prior(0, 1) = std::log(cfg.gamma);
            const int lp = g.constant(log_prior, "log_bern_prior");
            const int klb_rows = g.row_sum(g.mul(e.qb, g.sub_rowvec(e.lqb, lp)));
            loss_rows = g.add(g.mul(g.col(e.qb, 0), negg_rows), g.scale(klb_rows, cfg.lambda));
            eg.klb_mean = g.mean(klb_rows);
        } else {
            loss_rows = negg_rows;
        }

        // -log Dir(softmax(psi) | alpha,...,alpha), constant in psi at alpha = 1
        const double log_b = static_cast<double>(km) * std::lgamma(cfg.alpha) -
                             std::lgamma(static_cast<double>(km) * cfg.alpha);
        nd::Matrix log_b_mat(1, 1);
        log_b_mat(0, 0) = log_b;
        eg.dirp = g.add(g.constant(log_b_mat, "dir_log_norm"), g.scale(g.sum(lpsi), -(cfg.alpha - 1.0)));

        eg.recon_mean = g.mean(recon_rows);
        eg.klg_mean = g.mean(klg_rows);
        eg.klcat_mean = g.mean(klcat_rows);
        eg.total = g.add(g.mean(loss_rows), g.scale(eg.dirp, 1.0 / static_cast<double>(batch)));
        return eg;
    }

    LossBreakdown run(const ModelParams& params, const nd::Matrix& xb, const nd::Matrix& eb) {
        bind_params(g, params);
        g.bind(x, xb);
        g.bind(eps, eb);
        g.forward();
        LossBreakdown bd;
        bd.recon = g.value(recon_mean)(0, 0);
        bd.kl_gauss = g.value(klg_mean)(0, 0);
        bd.kl_cat = g.value(klcat_mean)(0, 0);
        bd.kl_bern = klb_mean >= 0 ? g.value(klb_mean)(0, 0) : 0.0;
        bd.dir_prior = g.value(dirp)(0, 0);
        bd.total = g.value(total)(0, 0);
        return bd;
    }
};

// Inference-only pass: posterior parameters for a batch.
struct EncodeGraph {
    nd::Graph g;
    std::size_t batch = 0;
    bool with_b = false;
    EncoderNodes e;

    static EncodeGraph build(const ModelConfig& cfg, std::size_t batch) {
        EncodeGraph eg;
        eg.batch = batch;
        eg.with_b = cfg.gamma > 0.0;
        eg.e = build_encoder(eg.g, cfg, batch, eg.with_b);
        return eg;
    }

    void run(const ModelParams& params, const nd::Matrix& xb) {
        bind_params(g, params);
        g.bind(e.x, xb);
        g.forward();
    }
};

// Phase-1 objective: plain autoencoder reconstruction with z = mu.
struct PretrainGraph {
    nd::Graph g;
    std::size_t batch = 0;
    int x = -1, recon_mean = -1;

    static PretrainGraph build(const ModelConfig& cfg, std::size_t batch) {
        PretrainGraph pg;
        pg.batch = batch;
        nd::Graph& g = pg.g;
        const auto d_in = static_cast<std::size_t>(cfg.input_dim);
        const auto h1s = static_cast<std::size_t>(cfg.encoder_dims[0]);
        const auto h2s = static_cast<std::size_t>(cfg.encoder_dims[1]);
        const auto ds = static_cast<std::size_t>(cfg.encoder_dims[2]);
        pg.x = g.input("x", batch, d_in);
        const int h1 = g.tanh_(g.affine(pg.x, g.param("enc_w1", d_in, h1s), g.param("enc_b1", 1, h1s)));
        const int h2 = g.tanh_(g.affine(h1, g.param("enc_w2", h1s, h2s), g.param("enc_b2", 1, h2s)));
        const int mu = g.affine(h2, g.param("enc_w3", h2s, ds), g.param("enc_b3", 1, ds));
        const int dec_out = build_decoder(g, cfg, mu);
        int recon_rows;
        if (cfg.recon_loss == ReconLoss::Gaussian) {
            recon_rows = g.scale(g.row_sum(g.square(g.sub(dec_out, pg.x))), 1.0 / (2.0 * cfg.sigma_x * cfg.sigma_x));
        } else {
            recon_rows = g.bce_logits(dec_out, pg.x);
        }
        pg.recon_mean = g.mean(recon_rows);
        return pg;
    }
};

}  // namespace detail

// Posterior parameters for a single sample.
inline PosteriorOutput encode(const ModelConfig& cfg, const ModelParams& params, std::span<const double> x) {
    cfg.validate();
    if (x.size() != static_cast<std::size_t>(cfg.input_dim))
        throw data_error("encode: input has dimension " + std::to_string(x.size()) + ", expected " +
                         std::to_string(cfg.input_dim));
    detail::EncodeGraph eg = detail::EncodeGraph::build(cfg, 1);
    nd::Matrix xb(1, x.size());
    for (std::size_t j = 0; j < x.size(); ++j) xb(0, j) = x[j];
    eg.run(params, xb);

    PosteriorOutput out;
    const nd::Matrix& mu = eg.g.value(eg.e.mu);
    out.mu.assign(mu.data(), mu.data() + mu.size());
    if (!mu.all_finite()) throw numeric_error("encode: non-finite activations");
    const nd::Matrix& qm = eg.g.value(eg.e.qm);
    out.q_m.assign(qm.data(), qm.data() + qm.size());
    if (eg.with_b) {
        const nd::Matrix& qb = eg.g.value(eg.e.qb);
        out.q_b = {qb(0, 0), qb(0, 1)};
    } else {
        out.q_b = {1.0, 0.0};
    }
    out.q_c.resize(out.q_m.size() + 1);
    for (std::size_t k = 0; k < out.q_m.size(); ++k) out.q_c[k] = out.q_m[k] * out.q_b[0];
    out.q_c.back() = out.q_b[1];
    return out;
}

// Decoder mean f(z); sigmoid output in BCE mode, linear in Gaussian mode.
inline std::vector<double> decode(const ModelConfig& cfg, const ModelParams& params, std::span<const double> z) {
    cfg.validate();
    if (z.size() != static_cast<std::size_t>(cfg.latent_dim()))
        throw data_error("decode: latent has dimension " + std::to_string(z.size()) + ", expected " +
                         std::to_string(cfg.latent_dim()));
    nd::Graph g;
    const int zin = g.input("z", 1, z.size());
    int out = detail::build_decoder(g, cfg, zin);
    if (cfg.recon_loss == ReconLoss::Bce) out = g.sigmoid_(out);
    detail::bind_params(g, params);
    nd::Matrix zb(1, z.size());
    for (std::size_t j = 0; j < z.size(); ++j) zb(0, j) = z[j];
    g.bind(zin, zb);
    g.forward();
    const nd::Matrix& v = g.value(out);
    return std::vector<double>(v.data(), v.data() + v.size());
}

inline LossBreakdown elbo_loss(const ModelConfig& cfg, const ModelParams& params, const nd::Matrix& batch,
                               const nd::Matrix& eps) {
    if (batch.rows() == 0) throw data_error("elbo_loss: empty batch");
    if (eps.rows() != batch.rows() || eps.cols() != static_cast<std::size_t>(cfg.latent_dim()))
        throw data_error("elbo_loss: need one latent noise row per sample");
    detail::ElboGraph eg = detail::ElboGraph::build(cfg, batch.rows());
    return eg.run(params, batch, eps);
}

struct ElboResult {
    LossBreakdown loss;
    ModelParams grads;
};

inline ElboResult elbo_loss_with_grads(const ModelConfig& cfg, const ModelParams& params, const nd::Matrix& batch,
                                       const nd::Matrix& eps) {
    if (batch.rows() == 0) throw data_error("elbo_loss: empty batch");
    detail::ElboGraph eg = detail::ElboGraph::build(cfg, batch.rows());
    ElboResult r;
    r.loss = eg.run(params, batch, eps);
    eg.g.backward(eg.total);
    detail::grads_into(eg.g, cfg, r.grads);
    return r;
}

struct BatchPosterior {
    nd::Matrix mu;   // n x latent
    nd::Matrix q_b;  // n x 2
    nd::Matrix q_m;  // n x (K-1)
    std::vector<int> labels;  // argmax of q_c, 1..K
};

// Argmax of q_c with ties broken toward the lowest index; label K is the
// remainder.
inline int assign_label(std::span<const double> q_m, double q_b0, double q_b1) {
    int best = 0;
    double best_v = q_m[0] * q_b0;
    for (std::size_t k = 1; k < q_m.size(); ++k) {
        const double v = q_m[k] * q_b0;
        if (v > best_v) {
            best_v = v;
            best = static_cast<int>(k);
        }
    }
    if (q_b1 > best_v) return static_cast<int>(q_m.size()) + 1;
    return best + 1;
}

inline BatchPosterior posterior_assign_batch(const ModelConfig& cfg, const ModelParams& params,
                                             const nd::Matrix& data) {
    cfg.validate();
    const std::size_t n = data.rows();
    const auto d = static_cast<std::size_t>(cfg.latent_dim());
    const auto km = static_cast<std::size_t>(cfg.k_classes - 1);
    BatchPosterior out;
    out.mu = nd::Matrix(n, d);
    out.q_b = nd::Matrix(n, 2);
    out.q_m = nd::Matrix(n, km);
    out.labels.resize(n);

    const std::size_t chunk = std::min<std::size_t>(n, 2048);
    std::map<std::size_t, detail::EncodeGraph> graphs;
    std::size_t at = 0;
    while (at < n) {
        const std::size_t b = std::min(chunk, n - at);
        auto it = graphs.find(b);
        if (it == graphs.end()) it = graphs.emplace(b, detail::EncodeGraph::build(cfg, b)).first;
        detail::EncodeGraph& eg = it->second;
        nd::Matrix xb(b, data.cols());
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < data.cols(); ++j) xb(i, j) = data(at + i, j);
        eg.run(params, xb);
        const nd::Matrix& mu = eg.g.value(eg.e.mu);
        const nd::Matrix& qm = eg.g.value(eg.e.qm);
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < d; ++j) out.mu(at + i, j) = mu(i, j);
            for (std::size_t j = 0; j < km; ++j) out.q_m(at + i, j) = qm(i, j);
            double b0 = 1.0, b1 = 0.0;
            if (eg.with_b) {
                const nd::Matrix& qb = eg.g.value(eg.e.qb);
                b0 = qb(i, 0);
                b1 = qb(i, 1);
            }
            out.q_b(at + i, 0) = b0;
            out.q_b(at + i, 1) = b1;
            out.labels[at + i] = assign_label(std::span<const double>(qm.row(i), km), b0, b1);
        }
        at += b;
    }
    return out;
}

inline int posterior_assign(const ModelConfig& cfg, const ModelParams& params, std::span<const double> x,
                            PosteriorOutput* posterior = nullptr) {
    PosteriorOutput p = encode(cfg, params, x);
    const int label = assign_label(p.q_m, p.q_b[0], p.q_b[1]);
    if (posterior != nullptr) *posterior = std::move(p);
    return label;
}

struct TrainHistoryRow {
    int epoch = 0;       // 1-based within its phase
    bool pretrain = false;
    LossBreakdown loss;
};

struct TrainResult {
    ModelParams params;
    std::vector<TrainHistoryRow> history;
    std::uint64_t optimizer_steps = 0;
};

// Two-phase SGVB training. Phase 1 fits a plain autoencoder and initializes
// the cluster means from k-means over the encoded training set; phase 2
// minimizes the full objective with Adam on shuffled mini-batches.
inline TrainResult train(const ModelConfig& cfg, const nd::Matrix& data) {
    cfg.validate();
    const std::size_t n = data.rows();
    if (n == 0) throw data_error("train: empty dataset");
    if (data.cols() != static_cast<std::size_t>(cfg.input_dim))
        throw data_error("train: dataset dimension " + std::to_string(data.cols()) + " does not match input_dim " +
                         std::to_string(cfg.input_dim));
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double v = data.data()[i];
        if (!(v >= -1e-9 && v <= 1.0 + 1e-9))
            throw data_error("train: dataset is not normalized to [0, 1]");
    }

    TrainResult result;
    result.params = init_params(cfg, cfg.seed);
    const auto d = static_cast<std::size_t>(cfg.latent_dim());
    const auto bsz = static_cast<std::size_t>(std::min<std::size_t>(cfg.batch_size, n));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    nd::Matrix xb, eb;

    auto gather = [&](const std::vector<std::size_t>& idx, std::size_t from, std::size_t count) {
        if (xb.rows() != count || xb.cols() != data.cols()) xb = nd::Matrix(count, data.cols());
        for (std::size_t i = 0; i < count; ++i) {
            const double* src = data.row(idx[from + i]);
            double* dst = xb.row(i);
            for (std::size_t j = 0; j < data.cols(); ++j) dst[j] = src[j];
        }
    };

    // Phase 1: autoencoder pretraining + k-means cluster mean init
    if (cfg.pretrain_epochs > 0) {
        std::map<std::size_t, detail::PretrainGraph> graphs;
        nd::AdamState opt;
        ModelParams grads;
        for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
            auto shuffle_rng = make_rng(cfg.seed, "pretrain-shuffle-" + std::to_string(epoch));
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            double epoch_loss = 0.0;
            for (std::size_t at = 0; at < n; at += bsz) {
                const std::size_t b = std::min(bsz, n - at);
                auto it = graphs.find(b);
                if (it == graphs.end()) it = graphs.emplace(b, detail::PretrainGraph::build(cfg, b)).first;
                detail::PretrainGraph& pg = it->second;
                gather(order, at, b);
                detail::bind_params(pg.g, result.params);
                pg.g.bind(pg.x, xb);
                pg.g.forward();
                const double loss = pg.g.value(pg.recon_mean)(0, 0);
                if (!std::isfinite(loss))
                    throw numeric_error("train: non-finite pretrain loss at epoch " + std::to_string(epoch + 1) +
                                        ", batch " + std::to_string(at / bsz + 1));
                epoch_loss += loss * static_cast<double>(b);
                pg.g.backward(pg.recon_mean);
                detail::grads_into(pg.g, cfg, grads);
                opt.begin_step();
                result.params.for_each([&](const char* name, nd::Matrix& p) {
                    opt.update(name, p, *grads.find(name));
                });
            }
            TrainHistoryRow row;
            row.epoch = epoch + 1;
            row.pretrain = true;
            row.loss.recon = epoch_loss / static_cast<double>(n);
            row.loss.total = row.loss.recon;
            result.history.push_back(row);
        }
        result.optimizer_steps += static_cast<std::uint64_t>(opt.step_count());

        // k-means over the encoded means initializes the cluster centers
        BatchPosterior post = posterior_assign_batch(cfg, result.params, data);
        mix::KMeansResult km = mix::kmeans(post.mu, cfg.k_classes - 1, derive_seed(cfg.seed, "mu-init"));
        result.params.cluster_means = km.centers;
    }

    // Phase 2: full objective
    if (cfg.epochs > 0) {
        std::map<std::size_t, detail::ElboGraph> graphs;
        nd::AdamState opt;
        ModelParams grads;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            auto shuffle_rng = make_rng(cfg.seed, "shuffle-" + std::to_string(epoch));
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            auto noise_rng = make_rng(cfg.seed, "noise-" + std::to_string(epoch));
            std::normal_distribution<double> normal(0.0, 1.0);
            LossBreakdown acc;
            for (std::size_t at = 0; at < n; at += bsz) {
                const std::size_t b = std::min(bsz, n - at);
                auto it = graphs.find(b);
                if (it == graphs.end()) it = graphs.emplace(b, detail::ElboGraph::build(cfg, b)).first;
                detail::ElboGraph& eg = it->second;
                gather(order, at, b);
                if (eb.rows() != b || eb.cols() != d) eb = nd::Matrix(b, d);
                for (std::size_t i = 0; i < eb.size(); ++i) eb.data()[i] = normal(noise_rng);
                const LossBreakdown bd = eg.run(result.params, xb, eb);
                if (!std::isfinite(bd.total))
                    throw numeric_error("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                        std::to_string(at / bsz + 1));
                const auto w = static_cast<double>(b);
                acc.recon += bd.recon * w;
                acc.kl_gauss += bd.kl_gauss * w;
                acc.kl_cat += bd.kl_cat * w;
                acc.kl_bern += bd.kl_bern * w;
                acc.dir_prior += bd.dir_prior * w;
                acc.total += bd.total * w;
                eg.g.backward(eg.total);
                detail::grads_into(eg.g, cfg, grads);
                opt.begin_step();
                result.params.for_each([&](const char* name, nd::Matrix& p) {
                    opt.update(name, p, *grads.find(name));
                });
            }
            TrainHistoryRow row;
            row.epoch = epoch + 1;
            row.pretrain = false;
            const auto inv_n = 1.0 / static_cast<double>(n);
            row.loss.recon = acc.recon * inv_n;
            row.loss.kl_gauss = acc.kl_gauss * inv_n;
            row.loss.kl_cat = acc.kl_cat * inv_n;
            row.loss.kl_bern = acc.kl_bern * inv_n;
            row.loss.dir_prior = acc.dir_prior * inv_n;
            row.loss.total = acc.total * inv_n;
            result.history.push_back(row);
        }
        result.optimizer_steps += static_cast<std::uint64_t>(opt.step_count());
    }
    return result;
}

// Per-dimension min-max scaling to [0, 1], fitted on the training set.
// Degenerate dimensions map to 0; transforms clamp so unseen data stays in
// the unit domain.
struct MinMaxNormalizer {
    std::vector<double> mins, maxs;

    static MinMaxNormalizer fit(const nd::Matrix& data) {
        if (data.rows() == 0) throw data_error("normalizer: empty dataset");
        MinMaxNormalizer nm;
        nm.mins.assign(data.cols(), std::numeric_limits<double>::infinity());
        nm.maxs.assign(data.cols(), -std::numeric_limits<double>::infinity());
        for (std::size_t i = 0; i < data.rows(); ++i) {
            const double* row = data.row(i);
            for (std::size_t j = 0; j < data.cols(); ++j) {
                nm.mins[j] = std::min(nm.mins[j], row[j]);
                nm.maxs[j] = std::max(nm.maxs[j], row[j]);
            }
        }
        return nm;
    }

    void transform(nd::Matrix& data) const {
        if (data.cols() != mins.size()) throw data_error("normalizer: dimension mismatch");
        for (std::size_t i = 0; i < data.rows(); ++i) {
            double* row = data.row(i);
            for (std::size_t j = 0; j < data.cols(); ++j) {
                const double range = maxs[j] - mins[j];
                row[j] = range > 0.0 ? std::clamp((row[j] - mins[j]) / range, 0.0, 1.0) : 0.0;
            }
        }
    }
};

}  // namespace tgmvae
