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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "tgmvae/mixmath.hpp"
#include "tgmvae/model.hpp"
#include "test_util.hpp"

using namespace tgmvae;
using tgmvae::nd::Matrix;

namespace {

ModelConfig small_config(int d_in = 7, int k = 4, double gamma = 0.1) {
    ModelConfig cfg;
    cfg.input_dim = d_in;
    cfg.encoder_dims = {6, 5, 3};
    cfg.k_classes = k;
    cfg.gamma = gamma;
    cfg.lambda = 4.0;
    cfg.alpha = 1.0;
    cfg.beta = 1.1;
    cfg.sigma_x = 1.0;
    return cfg;
}

Matrix random_batch(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Matrix x(n, d);
    testutil::fill_uniform(x, rng, 0.0, 1.0);
    return x;
}

Matrix random_noise(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix e(n, d);
    for (std::size_t i = 0; i < e.size(); ++i) e.data()[i] = normal(rng);
    return e;
}

// Plain recomputation of the loss through encode()/decode() and closed-form
// KLs; an independent route used to cross-check the graph implementation.
double reference_loss(const ModelConfig& cfg, const ModelParams& params, const Matrix& x, const Matrix& eps,
                      double lambda_weight) {
    const auto km = static_cast<std::size_t>(cfg.k_classes - 1);
    const std::vector<double> psi = psi_simplex(params);
    double total = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const std::vector<double> xi(x.row(i), x.row(i) + x.cols());
        const PosteriorOutput post = encode(cfg, params, xi);
        const std::vector<double> z =
            reparameterize(post.mu, std::vector<double>(eps.row(i), eps.row(i) + eps.cols()));
        const std::vector<double> xhat = decode(cfg, params, z);
        double recon = 0.0;
        if (cfg.recon_loss == ReconLoss::Gaussian) {
            for (std::size_t j = 0; j < xi.size(); ++j) {
                const double d = xhat[j] - xi[j];
                recon += d * d;
            }
            recon /= 2.0 * cfg.sigma_x * cfg.sigma_x;
        } else {
            for (std::size_t j = 0; j < xi.size(); ++j)
                recon -= xi[j] * std::log(xhat[j]) + (1.0 - xi[j]) * std::log(1.0 - xhat[j]);
        }
        double klg = 0.0;
        for (std::size_t k = 0; k < km; ++k) {
            const std::vector<double> mu_k(params.cluster_means.row(k), params.cluster_means.row(k) + post.mu.size());
            klg += post.q_m[k] * mix::kl_identity_gaussians(post.mu, mu_k);
        }
        const double klcat = mix::kl_categorical(post.q_m, psi);
        double sample = recon + klg + klcat;
        if (cfg.gamma > 0.0) {
            const std::vector<double> bern_prior{1.0 - cfg.gamma, cfg.gamma};
            const std::vector<double> qb{post.q_b[0], post.q_b[1]};
            sample = post.q_b[0] * sample + lambda_weight * mix::kl_categorical(qb, bern_prior);
        }
        total += sample;
    }
    total /= static_cast<double>(x.rows());
    const std::vector<double> conc(km, cfg.alpha);
    total += -mix::dirichlet_log_density(psi, conc) / static_cast<double>(x.rows());
    return total;
}

}  // namespace

TEST_CASE("init_params is deterministic with the documented shapes", "[model]") {
    ModelConfig cfg;
    cfg.input_dim = 784;
    cfg.encoder_dims = {384, 64, 4};
    cfg.k_classes = 4;
    const ModelParams a = init_params(cfg, 7);
    const ModelParams b = init_params(cfg, 7);
    bool equal = true;
    a.for_each([&](const char* name, const Matrix& m) {
        const Matrix* other = const_cast<ModelParams&>(b).find(name);
        equal = equal && (m == *other);
    });
    CHECK(equal);
    const ModelParams c = init_params(cfg, 8);
    CHECK_FALSE(c.enc_w1 == a.enc_w1);

    CHECK(a.enc_w1.rows() == 784);
    CHECK(a.enc_w1.cols() == 384);
    CHECK(a.enc_w2.rows() == 384);
    CHECK(a.enc_w2.cols() == 64);
    CHECK(a.enc_w3.rows() == 64);
    CHECK(a.enc_w3.cols() == 4);
    CHECK(a.head_m_w.rows() == 64);
    CHECK(a.head_m_w.cols() == 3);
    CHECK(a.head_b_w.cols() == 2);
    CHECK(a.dec_w3.rows() == 384);
    CHECK(a.dec_w3.cols() == 784);
    CHECK(a.cluster_means.rows() == 3);
    CHECK(a.cluster_means.cols() == 4);

    // zero psi logits mean a uniform mixing prior
    const std::vector<double> psi = psi_simplex(a);
    for (double v : psi) CHECK(v == Catch::Approx(1.0 / 3.0).margin(1e-15));
}

TEST_CASE("encode produces a posterior on the simplex", "[model]") {
    const ModelConfig cfg = small_config();
    const ModelParams params = init_params(cfg, 3);
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> x(static_cast<std::size_t>(cfg.input_dim));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (double& v : x) v = u(rng);
        const PosteriorOutput post = encode(cfg, params, x);
        double qc_sum = 0.0;
        for (double v : post.q_c) qc_sum += v;
        CHECK(std::abs(qc_sum - 1.0) < 1e-9);
        CHECK(post.q_c.size() == 4);
        for (std::size_t k = 0; k < post.q_m.size(); ++k)
            CHECK(post.q_c[k] == Catch::Approx(post.q_m[k] * post.q_b[0]).margin(1e-15));
        CHECK(post.q_c.back() == post.q_b[1]);
    }
}

TEST_CASE("zero-weight heads give uniform posteriors", "[model]") {
    const ModelConfig cfg = small_config();
    ModelParams params = init_params(cfg, 3);
    params.head_b_w.fill(0.0);
    params.head_b_b.fill(0.0);
    params.head_m_w.fill(0.0);
    params.head_m_b.fill(0.0);
    const std::vector<double> x(static_cast<std::size_t>(cfg.input_dim), 0.4);
    const PosteriorOutput post = encode(cfg, params, x);
    CHECK(post.q_b[0] == Catch::Approx(0.5).margin(1e-15));
    CHECK(post.q_b[1] == Catch::Approx(0.5).margin(1e-15));
    for (double v : post.q_m) CHECK(v == Catch::Approx(1.0 / 3.0).margin(1e-15));
}

TEST_CASE("encode is pure", "[model]") {
    const ModelConfig cfg = small_config();
    const ModelParams params = init_params(cfg, 9);
    const std::vector<double> x(static_cast<std::size_t>(cfg.input_dim), 0.25);
    const PosteriorOutput a = encode(cfg, params, x);
    const PosteriorOutput b = encode(cfg, params, x);
    CHECK(a.mu == b.mu);
    CHECK(a.q_m == b.q_m);
    CHECK(a.q_b == b.q_b);
}

TEST_CASE("reparameterize", "[model]") {
    const std::vector<double> mu{0.3, -0.7, 1.2};
    SECTION("zero noise returns the mean") {
        CHECK(reparameterize(mu, std::vector<double>{0.0, 0.0, 0.0}) == mu);
    }
    SECTION("sample mean and covariance match the law") {
        std::mt19937_64 rng(13);
        std::normal_distribution<double> normal(0.0, 1.0);
        const int n = 100000;
        std::vector<double> sum(3, 0.0);
        std::vector<std::vector<double>> outer(3, std::vector<double>(3, 0.0));
        for (int i = 0; i < n; ++i) {
            std::vector<double> eps(3);
            for (double& e : eps) e = normal(rng);
            const std::vector<double> z = reparameterize(mu, eps);
            for (int a = 0; a < 3; ++a) {
                sum[static_cast<std::size_t>(a)] += z[static_cast<std::size_t>(a)];
                for (int b = 0; b < 3; ++b)
                    outer[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] +=
                        (z[static_cast<std::size_t>(a)] - mu[static_cast<std::size_t>(a)]) *
                        (z[static_cast<std::size_t>(b)] - mu[static_cast<std::size_t>(b)]);
            }
        }
        const double band = 3.0 / std::sqrt(static_cast<double>(n));
        for (int a = 0; a < 3; ++a) {
            CHECK(std::abs(sum[static_cast<std::size_t>(a)] / n - mu[static_cast<std::size_t>(a)]) < band);
            for (int b = 0; b < 3; ++b) {
                const double cov = outer[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] / n;
                CHECK(std::abs(cov - (a == b ? 1.0 : 0.0)) < 0.05);
            }
        }
    }
    SECTION("dimension mismatch") {
        CHECK_THROWS_AS(reparameterize(mu, std::vector<double>{0.0}), tgmvae::data_error);
    }
}

TEST_CASE("decode", "[model]") {
    ModelConfig cfg = small_config(105);
    cfg.recon_loss = ReconLoss::Bce;
    ModelParams params = init_params(cfg, 21);
    SECTION("zero final layer in BCE mode outputs one half") {
        params.dec_w3.fill(0.0);
        params.dec_b3.fill(0.0);
        const std::vector<double> out = decode(cfg, params, std::vector<double>{0.1, -0.2, 0.4});
        REQUIRE(out.size() == 105);
        for (double v : out) CHECK(v == Catch::Approx(0.5).margin(1e-15));
    }
    SECTION("shapes and determinism") {
        const std::vector<double> z{0.3, 0.1, -0.5};
        const std::vector<double> a = decode(cfg, params, z);
        const std::vector<double> b = decode(cfg, params, z);
        CHECK(a.size() == 105);
        CHECK(a == b);
        CHECK_THROWS_AS(decode(cfg, params, std::vector<double>{0.1}), tgmvae::data_error);
    }
}

TEST_CASE("pi assembly follows the truncation rule", "[model]") {
    const std::vector<double> psi{0.5, 0.3, 0.2};
    const std::vector<double> pi = assemble_pi(psi, 0.1);
    REQUIRE(pi.size() == 4);
    CHECK(pi[0] == Catch::Approx(0.45).margin(1e-15));
    CHECK(pi[1] == Catch::Approx(0.27).margin(1e-15));
    CHECK(pi[2] == Catch::Approx(0.18).margin(1e-15));
    CHECK(pi[3] == Catch::Approx(0.10).margin(1e-15));
    double s = 0.0;
    for (double v : pi) s += v;
    CHECK(std::abs(s - 1.0) < 1e-12);
}

TEST_CASE("posterior assignment argmax with deterministic tie-breaks", "[model]") {
    SECTION("dominant outlier probability assigns the remainder") {
        const std::vector<double> q_m{0.5, 0.3, 0.2};
        CHECK(assign_label(q_m, 0.1, 0.9) == 4);
    }
    SECTION("certain inlier picks the largest cluster") {
        const std::vector<double> q_m{0.7, 0.2, 0.1};
        CHECK(assign_label(q_m, 1.0, 0.0) == 1);
    }
    SECTION("exact ties break toward the lowest index") {
        const std::vector<double> q_m{0.4, 0.4, 0.2};
        CHECK(assign_label(q_m, 1.0, 0.0) == 1);
        const std::vector<double> q_m2{0.5, 0.5};
        CHECK(assign_label(q_m2, 0.5, 0.5) == 3);  // q_c = (.25, .25, .5) -> remainder
        CHECK(assign_label(q_m2, 1.0, 0.5) == 1);  // major/remainder tie keeps the major
    }
    SECTION("end to end label matches the posterior argmax") {
        const ModelConfig cfg = small_config();
        const ModelParams params = init_params(cfg, 31);
        const std::vector<double> x(static_cast<std::size_t>(cfg.input_dim), 0.6);
        PosteriorOutput post;
        const int label = posterior_assign(cfg, params, x, &post);
        int expected = 1;
        for (std::size_t k = 1; k < post.q_c.size(); ++k)
            if (post.q_c[k] > post.q_c[static_cast<std::size_t>(expected - 1)]) expected = static_cast<int>(k) + 1;
        CHECK(label == expected);
    }
}

TEST_CASE("elbo with gamma 0 equals the Gaussian-mixture VAE objective", "[model]") {
    ModelConfig cfg = small_config(7, 4, 0.0);
    const ModelParams params = init_params(cfg, 17);
    const Matrix x = random_batch(6, 7, 100);
    const Matrix eps = random_noise(6, 3, 200);
    const LossBreakdown bd = elbo_loss(cfg, params, x, eps);
    CHECK(bd.kl_bern == 0.0);
    const double ref = reference_loss(cfg, params, x, eps, cfg.lambda);
    CHECK(bd.total == Catch::Approx(ref).margin(1e-12));
}

TEST_CASE("elbo with positive gamma matches the reformulated bound computed by hand", "[model]") {
    ModelConfig cfg = small_config(7, 4, 0.12);
    cfg.lambda = 3.0;
    const ModelParams params = init_params(cfg, 18);
    const Matrix x = random_batch(5, 7, 101);
    const Matrix eps = random_noise(5, 3, 202);
    const LossBreakdown bd = elbo_loss(cfg, params, x, eps);
    const double ref = reference_loss(cfg, params, x, eps, cfg.lambda);
    CHECK(bd.total == Catch::Approx(ref).margin(1e-10));
    CHECK(bd.kl_gauss >= 0.0);
    CHECK(bd.kl_cat >= -1e-12);
    CHECK(bd.kl_bern >= -1e-12);
}

TEST_CASE("the two bound routes agree: truncated assembly vs categorical form", "[model]") {
    // Route A is the implementation. Route B rebuilds the bound from the
    // K-simplex posterior q_c and the assembled prior pi, at unit lambda.
    ModelConfig cfg = small_config(6, 5, 0.2);
    cfg.lambda = 1.0;
    cfg.encoder_dims = {5, 4, 2};
    const ModelParams params = init_params(cfg, 77);
    const Matrix x = random_batch(4, 6, 303);
    const Matrix eps = random_noise(4, 2, 404);
    const LossBreakdown bd = elbo_loss(cfg, params, x, eps);

    const auto km = static_cast<std::size_t>(cfg.k_classes - 1);
    const std::vector<double> psi = psi_simplex(params);
    const std::vector<double> pi = assemble_pi(psi, cfg.gamma);
    double total = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const std::vector<double> xi(x.row(i), x.row(i) + x.cols());
        const PosteriorOutput post = encode(cfg, params, xi);
        const std::vector<double> z =
            reparameterize(post.mu, std::vector<double>(eps.row(i), eps.row(i) + eps.cols()));
        const std::vector<double> xhat = decode(cfg, params, z);
        double recon = 0.0;
        for (std::size_t j = 0; j < xi.size(); ++j) {
            const double d = xhat[j] - xi[j];
            recon += d * d;
        }
        recon /= 2.0 * cfg.sigma_x * cfg.sigma_x;
        // categorical-form bound over the K-simplex
        double bound = 0.0;
        for (std::size_t k = 0; k < post.q_c.size(); ++k)
            if (post.q_c[k] > 0.0) bound += post.q_c[k] * std::log(pi[k] / post.q_c[k]);
        for (std::size_t k = 0; k < km; ++k) {
            const std::vector<double> mu_k(params.cluster_means.row(k), params.cluster_means.row(k) + post.mu.size());
            const double neg_lk = recon + mix::kl_identity_gaussians(post.mu, mu_k);
            bound -= post.q_c[k] * neg_lk;
        }
        total += -bound;
    }
    total /= static_cast<double>(x.rows());
    const std::vector<double> conc(km, cfg.alpha);
    total += -mix::dirichlet_log_density(psi, conc) / static_cast<double>(x.rows());
    CHECK(bd.total == Catch::Approx(total).margin(1e-10));
}

TEST_CASE("single-cluster truncation-free model reduces to a plain VAE loss", "[model]") {
    ModelConfig cfg = small_config(5, 2, 0.0);
    cfg.encoder_dims = {4, 3, 2};
    const ModelParams params = init_params(cfg, 55);
    const Matrix x = random_batch(3, 5, 9);
    const Matrix eps = random_noise(3, 2, 10);
    const LossBreakdown bd = elbo_loss(cfg, params, x, eps);
    double expected = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const std::vector<double> xi(x.row(i), x.row(i) + x.cols());
        const PosteriorOutput post = encode(cfg, params, xi);
        CHECK(post.q_m[0] == 1.0);
        const std::vector<double> z =
            reparameterize(post.mu, std::vector<double>(eps.row(i), eps.row(i) + eps.cols()));
        const std::vector<double> xhat = decode(cfg, params, z);
        double recon = 0.0;
        for (std::size_t j = 0; j < xi.size(); ++j) {
            const double d = xhat[j] - xi[j];
            recon += d * d;
        }
        const std::vector<double> mu_1(params.cluster_means.row(0), params.cluster_means.row(0) + post.mu.size());
        expected += recon / 2.0 + mix::kl_identity_gaussians(post.mu, mu_1);
    }
    expected /= static_cast<double>(x.rows());
    CHECK(bd.total == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("a perfect autoencoder pays only the Bernoulli regularizer", "[model]") {
    ModelConfig cfg = small_config(4, 2, 0.1);
    cfg.lambda = 7.0;
    cfg.encoder_dims = {3, 3, 2};
    ModelParams params = ModelParams::shaped(cfg);  // all zeros
    // decoder bias reproduces the constant input exactly; mu = 0 = mu_1
    const double value = 0.37;
    params.dec_b3.fill(value);
    Matrix x(5, 4, value);
    Matrix eps(5, 2, 0.0);
    const LossBreakdown bd = elbo_loss(cfg, params, x, eps);
    CHECK(bd.recon == 0.0);
    CHECK(bd.kl_gauss == 0.0);
    CHECK(bd.kl_cat == 0.0);
    const double expected = cfg.lambda * mix::kl_categorical(std::vector<double>{0.5, 0.5},
                                                             std::vector<double>{0.9, 0.1});
    CHECK(bd.total == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("kl_gauss term equals the weighted closed-form KLs across modules", "[model]") {
    const ModelConfig cfg = small_config(6, 5, 0.1);
    const ModelParams params = init_params(cfg, 61);
    const Matrix x = random_batch(8, 6, 505);
    const Matrix eps = random_noise(8, 3, 606);
    const LossBreakdown bd = elbo_loss(cfg, params, x, eps);
    double expected = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const std::vector<double> xi(x.row(i), x.row(i) + x.cols());
        const PosteriorOutput post = encode(cfg, params, xi);
        for (std::size_t k = 0; k < post.q_m.size(); ++k) {
            const std::vector<double> mu_k(params.cluster_means.row(k), params.cluster_means.row(k) + post.mu.size());
            expected += post.q_m[k] * mix::kl_identity_gaussians(post.mu, mu_k);
        }
    }
    expected /= static_cast<double>(x.rows());
    CHECK(bd.kl_gauss == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("elbo gradients match finite differences for every parameter group", "[model]") {
    std::mt19937_64 rng(404);
    for (int rep = 0; rep < 3; ++rep) {
        ModelConfig cfg = small_config(6, rep == 1 ? 2 : 4, rep == 2 ? 0.0 : 0.15);
        cfg.encoder_dims = {5, 4, 2};
        cfg.lambda = 2.5;
        cfg.alpha = rep == 0 ? 1.4 : 1.0;
        cfg.recon_loss = rep == 2 ? ReconLoss::Bce : ReconLoss::Gaussian;
        ModelParams params = init_params(cfg, 1000 + static_cast<std::uint64_t>(rep));
        const Matrix x = random_batch(5, 6, 42 + static_cast<std::uint64_t>(rep));
        const Matrix eps = random_noise(5, 2, 43 + static_cast<std::uint64_t>(rep));

        const ElboResult res = elbo_loss_with_grads(cfg, params, x, eps);
        params.for_each([&](const char* name, Matrix& tensor) {
            auto eval = [&]() { return elbo_loss(cfg, params, x, eps).total; };
            const Matrix fd = testutil::fd_gradient(tensor, eval);
            const Matrix* analytic = res.grads.find(name);
            REQUIRE(analytic != nullptr);
            INFO("parameter group " << name << " rep " << rep);
            CHECK(testutil::l2_rel_error(*analytic, fd) < 1e-3);
        });
    }
}

TEST_CASE("train on no epochs returns the initial parameters", "[model]") {
    ModelConfig cfg = small_config();
    cfg.epochs = 0;
    cfg.pretrain_epochs = 0;
    cfg.seed = 99;
    const Matrix data = random_batch(20, 7, 7);
    const TrainResult tr = train(cfg, data);
    const ModelParams expected = init_params(cfg, cfg.seed);
    bool equal = true;
    tr.params.for_each([&](const char* name, const Matrix& m) {
        equal = equal && (m == *const_cast<ModelParams&>(expected).find(name));
    });
    CHECK(equal);
    CHECK(tr.history.empty());
}

TEST_CASE("train is deterministic per seed", "[model]") {
    ModelConfig cfg = small_config(5, 3, 0.1);
    cfg.encoder_dims = {4, 3, 2};
    cfg.epochs = 3;
    cfg.pretrain_epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = 12345;
    const Matrix data = random_batch(40, 5, 88);
    const TrainResult a = train(cfg, data);
    const TrainResult b = train(cfg, data);
    bool equal = true;
    a.params.for_each([&](const char* name, const Matrix& m) {
        equal = equal && (m == *const_cast<ModelParams&>(b.params).find(name));
    });
    CHECK(equal);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i)
        CHECK(a.history[i].loss.total == b.history[i].loss.total);
}

TEST_CASE("train rejects unnormalized data", "[model]") {
    ModelConfig cfg = small_config();
    cfg.epochs = 1;
    Matrix data = random_batch(10, 7, 3);
    data(0, 0) = 3.0;
    CHECK_THROWS_AS(train(cfg, data), tgmvae::data_error);
}

TEST_CASE("smoothed training loss is non-increasing on a small clustered dataset", "[model]") {
    // two well-separated correlation-like patterns plus noise
    std::mt19937_64 rng(2);
    std::normal_distribution<double> normal(0.0, 0.05);
    const std::size_t n = 300, d = 10;
    Matrix data(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double base = (i % 2 == 0) ? (j < d / 2 ? 0.8 : 0.2) : (j < d / 2 ? 0.2 : 0.8);
            data(i, j) = std::clamp(base + normal(rng), 0.0, 1.0);
        }
    ModelConfig cfg;
    cfg.input_dim = static_cast<int>(d);
    cfg.encoder_dims = {8, 6, 2};
    cfg.k_classes = 3;
    cfg.gamma = 0.1;
    cfg.lambda = 5.0;
    cfg.epochs = 30;
    cfg.pretrain_epochs = 5;
    cfg.batch_size = 32;
    cfg.seed = 4;
    const TrainResult tr = train(cfg, data);

    std::vector<double> totals;
    for (const TrainHistoryRow& row : tr.history)
        if (!row.pretrain) totals.push_back(row.loss.total);
    REQUIRE(totals.size() == 30);
    std::vector<double> windows;
    for (std::size_t at = 0; at + 5 <= totals.size(); at += 5) {
        double mean = 0.0;
        for (std::size_t i = at; i < at + 5; ++i) mean += totals[i];
        windows.push_back(mean / 5.0);
    }
    for (std::size_t i = 1; i < windows.size(); ++i)
        CHECK(windows[i] <= windows[i - 1] + 0.005 * std::abs(windows[i - 1]));
}

TEST_CASE("an overwhelming Bernoulli regularizer pins the expected outlier mass to gamma", "[model]") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t n = 200, d = 6;
    Matrix data(n, d);
    for (std::size_t i = 0; i < data.size(); ++i) data.data()[i] = u(rng);
    ModelConfig cfg;
    cfg.input_dim = static_cast<int>(d);
    cfg.encoder_dims = {5, 4, 2};
    cfg.k_classes = 3;
    cfg.gamma = 0.1;
    cfg.lambda = 1e6;
    cfg.epochs = 400;
    cfg.pretrain_epochs = 0;
    cfg.batch_size = 16;
    cfg.seed = 8;
    const TrainResult tr = train(cfg, data);
    const BatchPosterior post = posterior_assign_batch(cfg, tr.params, data);
    double mean_outlier_mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean_outlier_mass += post.q_b(i, 1);
    mean_outlier_mass /= static_cast<double>(n);
    CHECK(mean_outlier_mass == Catch::Approx(cfg.gamma).margin(0.05));
}
