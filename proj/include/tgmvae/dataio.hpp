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
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tgmvae/errors.hpp"
#include "tgmvae/matrix.hpp"
#include "tgmvae/model.hpp"

namespace tgmvae::io {

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

// Little-endian cursor over a fully loaded file.
class Reader {
public:
    Reader(const std::string& bytes, std::string label) : bytes_(bytes), label_(std::move(label)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }

    std::uint16_t u16() {
        const char* p = take(2);
        return static_cast<std::uint16_t>(static_cast<std::uint8_t>(p[0])) |
               static_cast<std::uint16_t>(static_cast<std::uint8_t>(p[1])) << 8;
    }

    std::uint32_t u32() {
        const char* p = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[i])) << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        const char* p = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(p[i])) << (8 * i);
        return v;
    }

    std::uint32_t u32_be() {
        const char* p = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<std::uint8_t>(p[i]);
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::string raw(std::size_t count) { return std::string(take(count), count); }

    std::size_t remaining() const { return bytes_.size() - pos_; }

    void expect_done() {
        if (pos_ != bytes_.size()) throw data_error(label_ + ": trailing bytes after payload");
    }

private:
    const char* take(std::size_t count) {
        if (pos_ + count > bytes_.size()) throw data_error(label_ + ": truncated file");
        const char* p = bytes_.data() + pos_;
        pos_ += count;
        return p;
    }

    const std::string& bytes_;
    std::string label_;
    std::size_t pos_ = 0;
};

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

// Write via a temp file and rename so readers never observe partial output.
inline void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw data_error("cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw data_error("short write to '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline std::string format_double(double v) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dataset files: "TGMV" magic, version, sample count, dimension, flags,
// then n x dim 32-bit little-endian floats and an optional u16 label block
// (flag bit 0). Header is 24 bytes.
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kDatasetVersion = 1;
inline constexpr std::uint32_t kDatasetFlagLabels = 1;

struct Dataset {
    nd::Matrix samples;
    std::optional<std::vector<std::uint16_t>> labels;
};

inline void write_dataset(const std::filesystem::path& path, const nd::Matrix& samples,
                          const std::vector<std::uint16_t>* labels = nullptr) {
    if (labels != nullptr && labels->size() != samples.rows())
        throw data_error("write_dataset: label count does not match sample count");
    std::string out;
    out.reserve(24 + samples.size() * 4 + (labels ? labels->size() * 2 : 0));
    out += "TGMV";
    detail::put_u16(out, kDatasetVersion);
    detail::put_u16(out, 0);  // reserved
    detail::put_u64(out, samples.rows());
    detail::put_u32(out, static_cast<std::uint32_t>(samples.cols()));
    detail::put_u32(out, labels != nullptr ? kDatasetFlagLabels : 0);
    for (std::size_t i = 0; i < samples.size(); ++i)
        detail::put_f32(out, static_cast<float>(samples.data()[i]));
    if (labels != nullptr)
        for (std::uint16_t l : *labels) detail::put_u16(out, l);
    detail::write_atomic(path, out);
}

inline Dataset read_dataset(const std::filesystem::path& path) {
    const std::string bytes = detail::slurp(path);
    detail::Reader r(bytes, "dataset '" + path.string() + "'");
    if (r.raw(4) != "TGMV") throw data_error("dataset '" + path.string() + "': bad magic");
    const std::uint16_t version = r.u16();
    if (version != kDatasetVersion)
        throw data_error("dataset '" + path.string() + "': unsupported version " + std::to_string(version));
    r.u16();  // reserved
    const std::uint64_t n = r.u64();
    const std::uint32_t dim = r.u32();
    const std::uint32_t flags = r.u32();
    const std::uint64_t expected = n * dim * 4 + ((flags & kDatasetFlagLabels) ? n * 2 : 0);
    if (r.remaining() < expected) throw data_error("dataset '" + path.string() + "': truncated payload");
    Dataset d;
    d.samples = nd::Matrix(n, dim);
    for (std::size_t i = 0; i < d.samples.size(); ++i) d.samples.data()[i] = static_cast<double>(r.f32());
    if (flags & kDatasetFlagLabels) {
        std::vector<std::uint16_t> labels(n);
        for (auto& l : labels) l = r.u16();
        d.labels = std::move(labels);
    }
    r.expect_done();
    return d;
}

// ---------------------------------------------------------------------------
// IDX ingestion (the MNIST container format): big-endian magic 0x00000803
// for u8 image tensors and 0x00000801 for u8 label vectors.
// ---------------------------------------------------------------------------

inline Dataset read_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const std::string ibytes = detail::slurp(images_path);
    detail::Reader ir(ibytes, "idx images '" + images_path.string() + "'");
    if (ir.u32_be() != 0x00000803u)
        throw data_error("idx images '" + images_path.string() + "': magic mismatch (want 0x00000803)");
    const std::uint32_t n = ir.u32_be();
    const std::uint32_t rows = ir.u32_be();
    const std::uint32_t cols = ir.u32_be();
    const std::size_t dim = static_cast<std::size_t>(rows) * cols;
    Dataset d;
    d.samples = nd::Matrix(n, dim);
    for (std::size_t i = 0; i < d.samples.size(); ++i)
        d.samples.data()[i] = static_cast<double>(ir.u8()) / 255.0;
    ir.expect_done();

    const std::string lbytes = detail::slurp(labels_path);
    detail::Reader lr(lbytes, "idx labels '" + labels_path.string() + "'");
    if (lr.u32_be() != 0x00000801u)
        throw data_error("idx labels '" + labels_path.string() + "': magic mismatch (want 0x00000801)");
    const std::uint32_t ln = lr.u32_be();
    if (ln != n)
        throw data_error("idx: image count " + std::to_string(n) + " does not match label count " +
                         std::to_string(ln));
    std::vector<std::uint16_t> labels(ln);
    for (auto& l : labels) l = lr.u8();
    lr.expect_done();
    d.labels = std::move(labels);
    return d;
}

// Keeps every image of the three chosen digits and subsamples the remaining
// digits so the chosen ones make up major_fraction of the output. Truth
// labels are 1..3 for the chosen digits in ascending order and 4 for the
// remainder.
struct MnistMixture {
    nd::Matrix samples;
    std::vector<int> truth;          // 1..4
    std::array<int, 3> digits{};     // ascending
};

inline MnistMixture make_mnist_mixture(const Dataset& data, std::array<int, 3> digits, double major_fraction,
                                       std::uint64_t seed) {
    if (!data.labels) throw data_error("make_mnist_mixture: dataset has no labels");
    if (!(major_fraction > 0.0 && major_fraction < 1.0))
        throw config_error("make_mnist_mixture: major_fraction must lie in (0, 1)");
    std::sort(digits.begin(), digits.end());
    if (digits[0] == digits[1] || digits[1] == digits[2])
        throw config_error("make_mnist_mixture: digits must be distinct");

    const auto& labels = *data.labels;
    std::vector<std::size_t> major_idx, rest_idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int l = labels[i];
        if (l == digits[0] || l == digits[1] || l == digits[2]) major_idx.push_back(i);
        else rest_idx.push_back(i);
    }
    if (major_idx.empty()) throw data_error("make_mnist_mixture: no samples of the chosen digits");

    const auto n_major = static_cast<double>(major_idx.size());
    std::size_t n_rest = static_cast<std::size_t>(std::llround(n_major / major_fraction - n_major));
    n_rest = std::min(n_rest, rest_idx.size());
    auto rng = make_rng(seed, "mnist-rest");
    std::shuffle(rest_idx.begin(), rest_idx.end(), rng);
    rest_idx.resize(n_rest);

    MnistMixture out;
    out.digits = digits;
    out.samples = nd::Matrix(major_idx.size() + rest_idx.size(), data.samples.cols());
    out.truth.reserve(major_idx.size() + rest_idx.size());
    std::size_t row = 0;
    auto copy_row = [&](std::size_t src, int truth_label) {
        const double* s = data.samples.row(src);
        double* dst = out.samples.row(row++);
        for (std::size_t j = 0; j < data.samples.cols(); ++j) dst[j] = s[j];
        out.truth.push_back(truth_label);
    };
    for (std::size_t i : major_idx) {
        const int l = labels[i];
        const int rank = l == digits[0] ? 1 : (l == digits[1] ? 2 : 3);
        copy_row(i, rank);
    }
    for (std::size_t i : rest_idx) copy_row(i, 4);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "TGMC" magic, version, the full ModelConfig, every parameter
// tensor as 64-bit floats (bitwise round trip), the normalization vectors,
// and the RNG seed / optimizer step counter.
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
    std::vector<double> norm_min, norm_max;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    std::string out;
    out += "TGMC";
    detail::put_u16(out, kCheckpointVersion);
    detail::put_u16(out, 0);

    const ModelConfig& c = ck.config;
    detail::put_u32(out, static_cast<std::uint32_t>(c.input_dim));
    for (int dim : c.encoder_dims) detail::put_u32(out, static_cast<std::uint32_t>(dim));
    detail::put_u32(out, static_cast<std::uint32_t>(c.k_classes));
    detail::put_f64(out, c.gamma);
    detail::put_f64(out, c.lambda);
    detail::put_f64(out, c.sigma_x);
    detail::put_f64(out, c.alpha);
    detail::put_f64(out, c.beta);
    detail::put_u16(out, c.recon_loss == ReconLoss::Gaussian ? 0 : 1);
    detail::put_u32(out, static_cast<std::uint32_t>(c.epochs));
    detail::put_u32(out, static_cast<std::uint32_t>(c.batch_size));
    detail::put_u32(out, static_cast<std::uint32_t>(c.pretrain_epochs));
    detail::put_u64(out, c.seed);

    std::uint32_t n_params = 0;
    ck.params.for_each([&](const char*, const nd::Matrix&) { ++n_params; });
    detail::put_u32(out, n_params);
    ck.params.for_each([&](const char* name, const nd::Matrix& m) {
        const std::string n(name);
        detail::put_u16(out, static_cast<std::uint16_t>(n.size()));
        out += n;
        detail::put_u64(out, m.rows());
        detail::put_u64(out, m.cols());
        for (std::size_t i = 0; i < m.size(); ++i) detail::put_f64(out, m.data()[i]);
    });

    detail::put_u32(out, static_cast<std::uint32_t>(ck.norm_min.size()));
    for (double v : ck.norm_min) detail::put_f64(out, v);
    for (double v : ck.norm_max) detail::put_f64(out, v);
    detail::put_u64(out, ck.seed);
    detail::put_u64(out, ck.step);
    detail::write_atomic(path, out);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = detail::slurp(path);
    detail::Reader r(bytes, "checkpoint '" + path.string() + "'");
    if (r.raw(4) != "TGMC") throw data_error("checkpoint '" + path.string() + "': bad magic");
    const std::uint16_t version = r.u16();
    if (version != kCheckpointVersion)
        throw data_error("checkpoint '" + path.string() + "': unsupported version " + std::to_string(version));
    r.u16();

    Checkpoint ck;
    ModelConfig& c = ck.config;
    c.input_dim = static_cast<int>(r.u32());
    for (int& dim : c.encoder_dims) dim = static_cast<int>(r.u32());
    c.k_classes = static_cast<int>(r.u32());
    c.gamma = r.f64();
    c.lambda = r.f64();
    c.sigma_x = r.f64();
    c.alpha = r.f64();
    c.beta = r.f64();
    c.recon_loss = r.u16() == 0 ? ReconLoss::Gaussian : ReconLoss::Bce;
    c.epochs = static_cast<int>(r.u32());
    c.batch_size = static_cast<int>(r.u32());
    c.pretrain_epochs = static_cast<int>(r.u32());
    c.seed = r.u64();

    ck.params = ModelParams::shaped(c);
    const std::uint32_t n_params = r.u32();
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::uint16_t name_len = r.u16();
        const std::string name = r.raw(name_len);
        const std::uint64_t rows = r.u64();
        const std::uint64_t cols = r.u64();
        nd::Matrix* m = ck.params.find(name);
        if (m == nullptr) throw data_error("checkpoint '" + path.string() + "': unknown tensor '" + name + "'");
        if (m->rows() != rows || m->cols() != cols)
            throw data_error("checkpoint '" + path.string() + "': tensor '" + name + "' has shape " +
                             std::to_string(rows) + "x" + std::to_string(cols) + ", expected " + m->shape_str());
        for (std::size_t j = 0; j < m->size(); ++j) m->data()[j] = r.f64();
    }

    const std::uint32_t norm_dim = r.u32();
    ck.norm_min.resize(norm_dim);
    for (double& v : ck.norm_min) v = r.f64();
    ck.norm_max.resize(norm_dim);
    for (double& v : ck.norm_max) v = r.f64();
    ck.seed = r.u64();
    ck.step = r.u64();
    r.expect_done();
    return ck;
}

// ---------------------------------------------------------------------------
// Run configuration: `key = value` text with '#' comments. Unknown keys are
// rejected; missing keys keep their defaults.
// ---------------------------------------------------------------------------

struct SimOptions {
    int n_states = 10;
    int n_major = 5;
    int n_roi = 15;
    int t_points = 50000;
    int window = 11;
    double noise_std = 0.1;
    bool shrinkage = false;
    double strong_corr_threshold = 0.5;

    void validate() const {
        if (n_states < 1) throw config_error("config: n_states must be >= 1");
        if (n_major < 1 || n_major > n_states) throw config_error("config: need 1 <= n_major <= n_states");
        if (n_roi < 2) throw config_error("config: n_roi must be >= 2");
        if (t_points < 1) throw config_error("config: t_points must be >= 1");
        if (window < 3) throw config_error("config: window must be >= 3");
        if (noise_std < 0.0) throw config_error("config: noise_std must be >= 0");
        if (strong_corr_threshold < 0.0 || strong_corr_threshold > 1.0)
            throw config_error("config: strong_corr_threshold must lie in [0, 1]");
    }
};

struct MnistOptions {
    double major_fraction = 0.9;
    std::vector<int> digits;  // empty = draw 3 digits from the run seed

    void validate() const {
        if (!(major_fraction > 0.0 && major_fraction < 1.0))
            throw config_error("config: major_fraction must lie in (0, 1)");
        if (!digits.empty() && digits.size() != 3)
            throw config_error("config: mnist_digits needs exactly 3 entries");
        for (int d : digits)
            if (d < 0 || d > 9) throw config_error("config: mnist_digits entries must lie in 0..9");
    }
};

struct RunConfig {
    ModelConfig model;
    SimOptions sim;
    MnistOptions mnist;

    void validate() const {
        sim.validate();
        mnist.validate();
        // model cross-field checks that do not require resolved dims
        if (model.k_classes < 2) throw config_error("config: K must be >= 2");
        if (model.gamma < 0.0 || model.gamma >= 1.0) throw config_error("config: gamma must lie in [0, 1)");
        if (model.lambda <= 0.0) throw config_error("config: lambda must be positive");
        if (model.sigma_x <= 0.0) throw config_error("config: sigma_x must be positive");
        if (model.alpha <= 0.0) throw config_error("config: alpha must be positive");
        if (model.beta <= 0.0) throw config_error("config: beta must be positive");
        if (model.epochs < 0 || model.pretrain_epochs < 0)
            throw config_error("config: epoch counts must be >= 0");
        if (model.batch_size < 1) throw config_error("config: batch_size must be >= 1");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

inline double parse_double(const std::string& v, int line) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw config_error("config line " + std::to_string(line) + ": cannot parse '" + v + "' as a number");
    }
}

inline long long parse_int(const std::string& v, int line) {
    try {
        std::size_t used = 0;
        const long long i = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return i;
    } catch (const std::exception&) {
        throw config_error("config line " + std::to_string(line) + ": cannot parse '" + v + "' as an integer");
    }
}

inline std::vector<int> parse_int_list(const std::string& v, int line) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(parse_int(trim(item), line)));
    return out;
}

}  // namespace detail

inline void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value, int line) {
    using detail::parse_double;
    using detail::parse_int;
    using detail::parse_int_list;
    ModelConfig& m = cfg.model;
    SimOptions& s = cfg.sim;
    if (key == "input_dim") m.input_dim = static_cast<int>(parse_int(value, line));
    else if (key == "encoder_dims") {
        const std::vector<int> dims = parse_int_list(value, line);
        if (dims.size() != 3) throw config_error("config line " + std::to_string(line) + ": encoder_dims needs 3 entries");
        m.encoder_dims = {dims[0], dims[1], dims[2]};
    } else if (key == "K") m.k_classes = static_cast<int>(parse_int(value, line));
    else if (key == "gamma") m.gamma = parse_double(value, line);
    else if (key == "lambda") m.lambda = parse_double(value, line);
    else if (key == "sigma_x") m.sigma_x = parse_double(value, line);
    else if (key == "alpha") m.alpha = parse_double(value, line);
    else if (key == "beta") m.beta = parse_double(value, line);
    else if (key == "recon_loss") {
        if (value == "gaussian") m.recon_loss = ReconLoss::Gaussian;
        else if (value == "bce") m.recon_loss = ReconLoss::Bce;
        else throw config_error("config line " + std::to_string(line) + ": recon_loss must be gaussian or bce");
    } else if (key == "epochs") m.epochs = static_cast<int>(parse_int(value, line));
    else if (key == "batch_size") m.batch_size = static_cast<int>(parse_int(value, line));
    else if (key == "pretrain_epochs") m.pretrain_epochs = static_cast<int>(parse_int(value, line));
    else if (key == "seed") m.seed = static_cast<std::uint64_t>(parse_int(value, line));
    else if (key == "n_states") s.n_states = static_cast<int>(parse_int(value, line));
    else if (key == "n_major") s.n_major = static_cast<int>(parse_int(value, line));
    else if (key == "n_roi") s.n_roi = static_cast<int>(parse_int(value, line));
    else if (key == "t_points") s.t_points = static_cast<int>(parse_int(value, line));
    else if (key == "window") s.window = static_cast<int>(parse_int(value, line));
    else if (key == "noise_std") s.noise_std = parse_double(value, line);
    else if (key == "shrinkage") {
        if (value == "on") s.shrinkage = true;
        else if (value == "off") s.shrinkage = false;
        else throw config_error("config line " + std::to_string(line) + ": shrinkage must be on or off");
    } else if (key == "strong_corr_threshold") s.strong_corr_threshold = parse_double(value, line);
    else if (key == "major_fraction") cfg.mnist.major_fraction = parse_double(value, line);
    else if (key == "mnist_digits") cfg.mnist.digits = parse_int_list(value, line);
    else throw config_error("config line " + std::to_string(line) + ": unknown key '" + key + "'");
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open config '" + path.string() + "'");
    RunConfig cfg;
    std::string raw_line;
    int line = 0;
    while (std::getline(in, raw_line)) {
        ++line;
        const auto hash = raw_line.find('#');
        if (hash != std::string::npos) raw_line.erase(hash);
        const std::string text = detail::trim(raw_line);
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(line) + ": expected 'key = value'");
        const std::string key = detail::trim(text.substr(0, eq));
        const std::string value = detail::trim(text.substr(eq + 1));
        if (key.empty()) throw config_error("config line " + std::to_string(line) + ": empty key");
        apply_config_line(cfg, key, value, line);
    }
    cfg.validate();
    return cfg;
}

// Fully resolved `key = value` dump, readable back by load_config.
inline void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
    using detail::format_double;
    std::string out;
    const ModelConfig& m = cfg.model;
    out += "input_dim = " + std::to_string(m.input_dim) + "\n";
    out += "encoder_dims = " + std::to_string(m.encoder_dims[0]) + "," + std::to_string(m.encoder_dims[1]) + "," +
           std::to_string(m.encoder_dims[2]) + "\n";
    out += "K = " + std::to_string(m.k_classes) + "\n";
    out += "gamma = " + format_double(m.gamma) + "\n";
    out += "lambda = " + format_double(m.lambda) + "\n";
    out += "sigma_x = " + format_double(m.sigma_x) + "\n";
    out += "alpha = " + format_double(m.alpha) + "\n";
    out += "beta = " + format_double(m.beta) + "\n";
    out += "recon_loss = " + recon_loss_name(m.recon_loss) + "\n";
    out += "epochs = " + std::to_string(m.epochs) + "\n";
    out += "batch_size = " + std::to_string(m.batch_size) + "\n";
    out += "pretrain_epochs = " + std::to_string(m.pretrain_epochs) + "\n";
    out += "seed = " + std::to_string(m.seed) + "\n";
    const SimOptions& s = cfg.sim;
    out += "n_states = " + std::to_string(s.n_states) + "\n";
    out += "n_major = " + std::to_string(s.n_major) + "\n";
    out += "n_roi = " + std::to_string(s.n_roi) + "\n";
    out += "t_points = " + std::to_string(s.t_points) + "\n";
    out += "window = " + std::to_string(s.window) + "\n";
    out += "noise_std = " + format_double(s.noise_std) + "\n";
    out += std::string("shrinkage = ") + (s.shrinkage ? "on" : "off") + "\n";
    out += "strong_corr_threshold = " + format_double(s.strong_corr_threshold) + "\n";
    out += "major_fraction = " + format_double(cfg.mnist.major_fraction) + "\n";
    if (!cfg.mnist.digits.empty()) {
        out += "mnist_digits = ";
        for (std::size_t i = 0; i < cfg.mnist.digits.size(); ++i)
            out += (i ? "," : "") + std::to_string(cfg.mnist.digits[i]);
        out += "\n";
    }
    detail::write_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Metric reports: header row, then one row per (method, seed, metric, value).
// ---------------------------------------------------------------------------

struct MetricRow {
    std::string method;
    std::uint64_t seed = 0;
    std::string metric;
    double value = 0.0;
};

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
    std::string out = "method,seed,metric,value\n";
    for (const MetricRow& r : rows)
        out += r.method + "," + std::to_string(r.seed) + "," + r.metric + "," + detail::format_double(r.value) + "\n";
    detail::write_atomic(path, out);
}

inline std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open metrics csv '" + path.string() + "'");
    std::vector<MetricRow> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1) {
            if (detail::trim(line) != "method,seed,metric,value")
                throw data_error("metrics csv '" + path.string() + "': unexpected header");
            continue;
        }
        if (detail::trim(line).empty()) continue;
        std::stringstream ss(line);
        MetricRow r;
        std::string seed_str, value_str;
        if (!std::getline(ss, r.method, ',') || !std::getline(ss, seed_str, ',') ||
            !std::getline(ss, r.metric, ',') || !std::getline(ss, value_str))
            throw data_error("metrics csv '" + path.string() + "': malformed line " + std::to_string(line_no));
        r.seed = static_cast<std::uint64_t>(detail::parse_int(seed_str, line_no));
        r.value = detail::parse_double(value_str, line_no);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace tgmvae::io
