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

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "tgmvae/errors.hpp"
#include "tgmvae/matrix.hpp"

namespace tgmvae::nd {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. One begin_step() per optimization step, then one
// update() per parameter tensor. Moment slots are keyed by tensor name and
// created lazily with the tensor's shape.
class AdamState {
public:
    explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

    void begin_step() { ++t_; }

    void update(const std::string& name, Matrix& param, const Matrix& grad) {
        if (t_ == 0) throw numeric_error("adam: update() before begin_step()");
        if (!param.same_shape(grad))
            throw data_error("adam: shape mismatch for '" + name + "': param " + param.shape_str() +
                             " vs grad " + grad.shape_str());
        if (!grad.all_finite())
            throw numeric_error("adam: non-finite gradient for '" + name + "'");
        Slot& s = slots_[name];
        if (!s.m.same_shape(param)) {
            s.m = Matrix(param.rows(), param.cols());
            s.v = Matrix(param.rows(), param.cols());
        }
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t i = 0; i < param.size(); ++i) {
            const double g = grad.data()[i];
            double& m = s.m.data()[i];
            double& v = s.v.data()[i];
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            const double mhat = m / c1;
            const double vhat = v / c2;
            param.data()[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }

    std::int64_t step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    struct Slot {
        Matrix m, v;
    };
    AdamConfig cfg_;
    std::map<std::string, Slot> slots_;
    std::int64_t t_ = 0;
};

}  // namespace tgmvae::nd
