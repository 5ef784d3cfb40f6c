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

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "tgmvae/errors.hpp"
#include "tgmvae/matrix.hpp"

namespace tgmvae::nd {

// Reverse-mode automatic differentiation over a fixed op set. Nodes are
// appended in topological order (an op can only reference earlier nodes), so
// forward() is a single left-to-right sweep and backward() the reverse sweep.
//
// Shapes are fixed at build time. Row-wise ops (softmax, log_softmax, row_sum,
// bce_logits) treat each row of a (B x n) matrix as one sample; there is no
// general broadcasting beyond the affine bias and sub_rowvec.
enum class OpKind {
    Input,
    Param,
    Const,
    Affine,      // X(B,n) * W(n,m) + b(1,m)
    Tanh,
    Sigmoid,
    Softmax,     // row-wise, max-stabilized
    LogSoftmax,  // row-wise, log-sum-exp stabilized
    Add,
    Sub,
    Mul,         // elementwise
    Square,
    Scale,       // multiply by compile-time scalar
    Sum,         // all entries -> 1x1
    Mean,        // all entries -> 1x1
    RowSum,      // (r,c) -> (r,1)
    Col,         // fixed column -> (r,1)
    Row,         // fixed row -> (1,c)
    SubRowVec,   // X(r,c) - v(1,c)
    BceLogits,   // row-wise binary cross-entropy of sigmoid(S) vs targets -> (r,1)
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Input: return "input";
        case OpKind::Param: return "param";
        case OpKind::Const: return "const";
        case OpKind::Affine: return "affine";
        case OpKind::Tanh: return "tanh";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Softmax: return "softmax";
        case OpKind::LogSoftmax: return "log_softmax";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Square: return "square";
        case OpKind::Scale: return "scale";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::RowSum: return "row_sum";
        case OpKind::Col: return "col";
        case OpKind::Row: return "row";
        case OpKind::SubRowVec: return "sub_rowvec";
        case OpKind::BceLogits: return "bce_logits";
    }
    return "?";
}

class Graph {
public:
    struct Node {
        OpKind kind;
        std::string name;
        std::array<int, 3> in{-1, -1, -1};
        std::size_t rows = 0, cols = 0;
        double factor = 0.0;    // Scale
        std::size_t index = 0;  // Col / Row
        Matrix value;
        Matrix grad;
        bool bound = false;  // leaves only
    };

    int input(const std::string& name, std::size_t rows, std::size_t cols) {
        return add_leaf(OpKind::Input, name, rows, cols);
    }

    int param(const std::string& name, std::size_t rows, std::size_t cols) {
        int id = add_leaf(OpKind::Param, name, rows, cols);
        params_.push_back(id);
        return id;
    }

    int constant(const Matrix& v, const std::string& name = "") {
        Node n;
        n.kind = OpKind::Const;
        n.rows = v.rows();
        n.cols = v.cols();
        n.value = v;
        n.bound = true;
        return push(std::move(n), name);
    }

    int affine(int x, int w, int b) {
        const Node& nx = at(x);
        const Node& nw = at(w);
        const Node& nb = at(b);
        if (nx.cols != nw.rows || nb.rows != 1 || nb.cols != nw.cols)
            throw shape_error("affine", {x, w, b});
        return push_op(OpKind::Affine, {x, w, b}, nx.rows, nw.cols);
    }

    int tanh_(int x) { return unary(OpKind::Tanh, x); }
    int sigmoid_(int x) { return unary(OpKind::Sigmoid, x); }
    int softmax(int x) { return unary(OpKind::Softmax, x); }
    int log_softmax(int x) { return unary(OpKind::LogSoftmax, x); }
    int square(int x) { return unary(OpKind::Square, x); }

    int add(int a, int b) { return binary_same(OpKind::Add, a, b); }
    int sub(int a, int b) { return binary_same(OpKind::Sub, a, b); }
    int mul(int a, int b) { return binary_same(OpKind::Mul, a, b); }

    int scale(int x, double factor) {
        int id = unary(OpKind::Scale, x);
        nodes_[id].factor = factor;
        return id;
    }

    int sum(int x) { return push_op(OpKind::Sum, {x}, 1, 1); }
    int mean(int x) { return push_op(OpKind::Mean, {x}, 1, 1); }
    int row_sum(int x) { return push_op(OpKind::RowSum, {x}, at(x).rows, 1); }

    int col(int x, std::size_t j) {
        if (j >= at(x).cols) throw shape_error("col", {x});
        int id = push_op(OpKind::Col, {x}, at(x).rows, 1);
        nodes_[id].index = j;
        return id;
    }

    int row(int x, std::size_t i) {
        if (i >= at(x).rows) throw shape_error("row", {x});
        int id = push_op(OpKind::Row, {x}, 1, at(x).cols);
        nodes_[id].index = i;
        return id;
    }

    int sub_rowvec(int x, int v) {
        const Node& nx = at(x);
        const Node& nv = at(v);
        if (nv.rows != 1 || nv.cols != nx.cols) throw shape_error("sub_rowvec", {x, v});
        return push_op(OpKind::SubRowVec, {x, v}, nx.rows, nx.cols);
    }

    int bce_logits(int logits, int targets) {
        const Node& ns = at(logits);
        const Node& nt = at(targets);
        if (ns.rows != nt.rows || ns.cols != nt.cols) throw shape_error("bce_logits", {logits, targets});
        return push_op(OpKind::BceLogits, {logits, targets}, ns.rows, 1);
    }

    void bind(int id, const Matrix& v) {
        Node& n = nodes_.at(static_cast<std::size_t>(id));
        if (n.kind != OpKind::Input && n.kind != OpKind::Param)
            throw data_error("graph: node '" + n.name + "' is not bindable");
        if (v.rows() != n.rows || v.cols() != n.cols)
            throw data_error("graph: shape mismatch binding node '" + n.name + "': expected " +
                             std::to_string(n.rows) + "x" + std::to_string(n.cols) + ", got " + v.shape_str());
        n.value = v;
        n.bound = true;
    }

    void bind(const std::string& name, const Matrix& v) { bind(id_of(name), v); }

    int id_of(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw data_error("graph: unknown node name '" + name + "'");
        return it->second;
    }

    // Evaluates every node in topological order. Deterministic for fixed
    // bindings; repeated calls produce bitwise-identical values.
    void forward() {
        for (Node& n : nodes_) compute(n);
    }

    // Gradients of a scalar loss node with respect to every node. Parameters
    // that do not reach the loss keep an all-zero gradient.
    void backward(int loss) {
        Node& ln = nodes_.at(static_cast<std::size_t>(loss));
        if (ln.rows != 1 || ln.cols != 1)
            throw data_error("backward: loss node '" + ln.name + "' is not scalar (" + ln.value.shape_str() + ")");
        for (Node& n : nodes_) {
            if (n.grad.rows() != n.rows || n.grad.cols() != n.cols) n.grad = Matrix(n.rows, n.cols);
            else n.grad.fill(0.0);
        }
        ln.grad(0, 0) = 1.0;
        for (int id = loss; id >= 0; --id) propagate(nodes_[static_cast<std::size_t>(id)]);
    }

    const Matrix& value(int id) const { return at(id).value; }
    const Matrix& grad(int id) const { return at(id).grad; }
    const std::vector<int>& param_ids() const { return params_; }
    const std::string& name(int id) const { return at(id).name; }
    std::size_t node_count() const { return nodes_.size(); }

private:
    const Node& at(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

    data_error shape_error(const char* op, std::initializer_list<int> ids) const {
        std::string msg = std::string("graph: shape mismatch in ") + op + "(";
        bool first = true;
        for (int id : ids) {
            if (!first) msg += ", ";
            first = false;
            msg += "'" + at(id).name + "' " + std::to_string(at(id).rows) + "x" + std::to_string(at(id).cols);
        }
        msg += ")";
        return data_error(msg);
    }

    int add_leaf(OpKind kind, const std::string& name, std::size_t rows, std::size_t cols) {
        Node n;
        n.kind = kind;
        n.rows = rows;
        n.cols = cols;
        return push(std::move(n), name);
    }

    int unary(OpKind kind, int x) { return push_op(kind, {x}, at(x).rows, at(x).cols); }

    int binary_same(OpKind kind, int a, int b) {
        if (at(a).rows != at(b).rows || at(a).cols != at(b).cols)
            throw shape_error(op_name(kind), {a, b});
        return push_op(kind, {a, b}, at(a).rows, at(a).cols);
    }

    int push_op(OpKind kind, std::initializer_list<int> ins, std::size_t rows, std::size_t cols) {
        Node n;
        n.kind = kind;
        n.rows = rows;
        n.cols = cols;
        int slot = 0;
        for (int i : ins) {
            if (i < 0 || i >= static_cast<int>(nodes_.size()))
                throw data_error(std::string("graph: op ") + op_name(kind) + " references unknown node");
            n.in[static_cast<std::size_t>(slot++)] = i;
        }
        return push(std::move(n), "");
    }

    int push(Node&& n, const std::string& name) {
        const int id = static_cast<int>(nodes_.size());
        n.name = name.empty() ? std::string(op_name(n.kind)) + "#" + std::to_string(id) : name;
        if (n.value.rows() != n.rows || n.value.cols() != n.cols) {
            if (n.kind != OpKind::Input && n.kind != OpKind::Param) n.value = Matrix(n.rows, n.cols);
        }
        if (!name.empty()) {
            if (by_name_.count(name)) throw data_error("graph: duplicate node name '" + name + "'");
            by_name_[name] = id;
        }
        nodes_.push_back(std::move(n));
        return id;
    }

    static double stable_sigmoid(double t) {
        if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
        const double e = std::exp(t);
        return e / (1.0 + e);
    }

    void compute(Node& n) {
        switch (n.kind) {
            case OpKind::Input:
            case OpKind::Param:
                if (!n.bound) throw data_error("graph: node '" + n.name + "' evaluated before binding");
                return;
            case OpKind::Const:
                return;
            default:
                break;
        }
        const Matrix& a = nodes_[static_cast<std::size_t>(n.in[0])].value;
        switch (n.kind) {
            case OpKind::Affine: {
                const Matrix& w = nodes_[static_cast<std::size_t>(n.in[1])].value;
                const Matrix& b = nodes_[static_cast<std::size_t>(n.in[2])].value;
                matmul_into(n.value, a, w);
                for (std::size_t i = 0; i < n.rows; ++i) {
                    double* yi = n.value.row(i);
                    const double* bp = b.row(0);
                    for (std::size_t j = 0; j < n.cols; ++j) yi[j] += bp[j];
                }
                break;
            }
            case OpKind::Tanh:
                for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] = std::tanh(a.data()[i]);
                break;
            case OpKind::Sigmoid:
                for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] = stable_sigmoid(a.data()[i]);
                break;
            case OpKind::Softmax:
                for (std::size_t i = 0; i < n.rows; ++i) {
                    const double* xi = a.row(i);
                    double* yi = n.value.row(i);
                    double mx = xi[0];
                    for (std::size_t j = 1; j < n.cols; ++j) mx = std::max(mx, xi[j]);
                    double s = 0.0;
                    for (std::size_t j = 0; j < n.cols; ++j) {
                        yi[j] = std::exp(xi[j] - mx);
                        s += yi[j];
                    }
                    for (std::size_t j = 0; j < n.cols; ++j) yi[j] /= s;
                }
                break;
            case OpKind::LogSoftmax:
                for (std::size_t i = 0; i < n.rows; ++i) {
                    const double* xi = a.row(i);
                    double* yi = n.value.row(i);
                    double mx = xi[0];
                    for (std::size_t j = 1; j < n.cols; ++j) mx = std::max(mx, xi[j]);
                    double s = 0.0;
                    for (std::size_t j = 0; j < n.cols; ++j) s += std::exp(xi[j] - mx);
                    const double lse = mx + std::log(s);
                    for (std::size_t j = 0; j < n.cols; ++j) yi[j] = xi[j] - lse;
                }
                break;
            case OpKind::Add: {
                const Matrix& b = nodes_[static_cast<std::size_t>(n.in[1])].value;
                for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] = a.data()[i] + b.data()[i];
                break;
            }
            case OpKind::Sub: {
                const Matrix& b = nodes_[static_cast<std::size_t>(n.in[1])].value;
                for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] = a.data()[i] - b.data()[i];
                break;
            }
            case OpKind::Mul: {
                const Matrix& b = nodes_[static_cast<std::size_t>(n.in[1])].value;
                for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] = a.data()[i] * b.data()[i];
                break;
            }
            case OpKind::Square:
                for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] = a.data()[i] * a.data()[i];
                break;
            case OpKind::Scale:
                for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] = n.factor * a.data()[i];
                break;
            case OpKind::Sum: {
                double s = 0.0;
                for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
                n.value(0, 0) = s;
                break;
            }
            case OpKind::Mean: {
                double s = 0.0;
                for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
                n.value(0, 0) = s / static_cast<double>(a.size());
                break;
            }
            case OpKind::RowSum:
                for (std::size_t i = 0; i < n.rows; ++i) {
                    const double* xi = a.row(i);
                    double s = 0.0;
                    for (std::size_t j = 0; j < a.cols(); ++j) s += xi[j];
                    n.value(i, 0) = s;
                }
                break;
            case OpKind::Col:
                for (std::size_t i = 0; i < n.rows; ++i) n.value(i, 0) = a(i, n.index);
                break;
            case OpKind::Row:
                for (std::size_t j = 0; j < n.cols; ++j) n.value(0, j) = a(n.index, j);
                break;
            case OpKind::SubRowVec: {
                const Matrix& v = nodes_[static_cast<std::size_t>(n.in[1])].value;
                for (std::size_t i = 0; i < n.rows; ++i) {
                    const double* xi = a.row(i);
                    const double* vp = v.row(0);
                    double* yi = n.value.row(i);
                    for (std::size_t j = 0; j < n.cols; ++j) yi[j] = xi[j] - vp[j];
                }
                break;
            }
            case OpKind::BceLogits: {
                const Matrix& t = nodes_[static_cast<std::size_t>(n.in[1])].value;
                for (std::size_t i = 0; i < n.rows; ++i) {
                    const double* si = a.row(i);
                    const double* ti = t.row(i);
                    double s = 0.0;
                    for (std::size_t j = 0; j < a.cols(); ++j) {
                        const double v = si[j];
                        s += std::max(v, 0.0) - v * ti[j] + std::log1p(std::exp(-std::abs(v)));
                    }
                    n.value(i, 0) = s;
                }
                break;
            }
            default:
                break;
        }
    }

    void propagate(Node& n) {
        if (n.kind == OpKind::Input || n.kind == OpKind::Param || n.kind == OpKind::Const) return;
        Node& na = nodes_[static_cast<std::size_t>(n.in[0])];
        const Matrix& g = n.grad;
        switch (n.kind) {
            case OpKind::Affine: {
                Node& nw = nodes_[static_cast<std::size_t>(n.in[1])];
                Node& nb = nodes_[static_cast<std::size_t>(n.in[2])];
                matmul_a_bt_into(na.grad, g, nw.value, /*accumulate=*/true);
                matmul_at_b_into(nw.grad, na.value, g, /*accumulate=*/true);
                for (std::size_t i = 0; i < g.rows(); ++i) {
                    const double* gi = g.row(i);
                    double* bg = nb.grad.row(0);
                    for (std::size_t j = 0; j < g.cols(); ++j) bg[j] += gi[j];
                }
                break;
            }
            case OpKind::Tanh:
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double y = n.value.data()[i];
                    na.grad.data()[i] += g.data()[i] * (1.0 - y * y);
                }
                break;
            case OpKind::Sigmoid:
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double y = n.value.data()[i];
                    na.grad.data()[i] += g.data()[i] * y * (1.0 - y);
                }
                break;
            case OpKind::Softmax:
                for (std::size_t i = 0; i < n.rows; ++i) {
                    const double* yi = n.value.row(i);
                    const double* gi = g.row(i);
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n.cols; ++j) dot += gi[j] * yi[j];
                    double* ai = na.grad.row(i);
                    for (std::size_t j = 0; j < n.cols; ++j) ai[j] += yi[j] * (gi[j] - dot);
                }
                break;
            case OpKind::LogSoftmax:
                for (std::size_t i = 0; i < n.rows; ++i) {
                    const double* yi = n.value.row(i);
                    const double* gi = g.row(i);
                    double gs = 0.0;
                    for (std::size_t j = 0; j < n.cols; ++j) gs += gi[j];
                    double* ai = na.grad.row(i);
                    for (std::size_t j = 0; j < n.cols; ++j) ai[j] += gi[j] - std::exp(yi[j]) * gs;
                }
                break;
            case OpKind::Add: {
                Node& nb = nodes_[static_cast<std::size_t>(n.in[1])];
                for (std::size_t i = 0; i < g.size(); ++i) {
                    na.grad.data()[i] += g.data()[i];
                    nb.grad.data()[i] += g.data()[i];
                }
                break;
            }
            case OpKind::Sub: {
                Node& nb = nodes_[static_cast<std::size_t>(n.in[1])];
                for (std::size_t i = 0; i < g.size(); ++i) {
                    na.grad.data()[i] += g.data()[i];
                    nb.grad.data()[i] -= g.data()[i];
                }
                break;
            }
            case OpKind::Mul: {
                Node& nb = nodes_[static_cast<std::size_t>(n.in[1])];
                for (std::size_t i = 0; i < g.size(); ++i) {
                    na.grad.data()[i] += g.data()[i] * nb.value.data()[i];
                    nb.grad.data()[i] += g.data()[i] * na.value.data()[i];
                }
                break;
            }
            case OpKind::Square:
                for (std::size_t i = 0; i < g.size(); ++i)
                    na.grad.data()[i] += 2.0 * na.value.data()[i] * g.data()[i];
                break;
            case OpKind::Scale:
                for (std::size_t i = 0; i < g.size(); ++i) na.grad.data()[i] += n.factor * g.data()[i];
                break;
            case OpKind::Sum: {
                const double gv = g(0, 0);
                for (std::size_t i = 0; i < na.grad.size(); ++i) na.grad.data()[i] += gv;
                break;
            }
            case OpKind::Mean: {
                const double gv = g(0, 0) / static_cast<double>(na.value.size());
                for (std::size_t i = 0; i < na.grad.size(); ++i) na.grad.data()[i] += gv;
                break;
            }
            case OpKind::RowSum:
                for (std::size_t i = 0; i < n.rows; ++i) {
                    const double gv = g(i, 0);
                    double* ai = na.grad.row(i);
                    for (std::size_t j = 0; j < na.grad.cols(); ++j) ai[j] += gv;
                }
                break;
            case OpKind::Col:
                for (std::size_t i = 0; i < n.rows; ++i) na.grad(i, n.index) += g(i, 0);
                break;
            case OpKind::Row:
                for (std::size_t j = 0; j < n.cols; ++j) na.grad(n.index, j) += g(0, j);
                break;
            case OpKind::SubRowVec: {
                Node& nv = nodes_[static_cast<std::size_t>(n.in[1])];
                for (std::size_t i = 0; i < n.rows; ++i) {
                    const double* gi = g.row(i);
                    double* ai = na.grad.row(i);
                    double* vg = nv.grad.row(0);
                    for (std::size_t j = 0; j < n.cols; ++j) {
                        ai[j] += gi[j];
                        vg[j] -= gi[j];
                    }
                }
                break;
            }
            case OpKind::BceLogits: {
                Node& nt = nodes_[static_cast<std::size_t>(n.in[1])];
                for (std::size_t i = 0; i < n.rows; ++i) {
                    const double gv = g(i, 0);
                    const double* si = na.value.row(i);
                    const double* ti = nt.value.row(i);
                    double* ag = na.grad.row(i);
                    double* tg = nt.grad.row(i);
                    for (std::size_t j = 0; j < na.value.cols(); ++j) {
                        ag[j] += gv * (stable_sigmoid(si[j]) - ti[j]);
                        tg[j] += gv * (-si[j]);
                    }
                }
                break;
            }
            default:
                break;
        }
    }

    std::vector<Node> nodes_;
    std::vector<int> params_;
    std::unordered_map<std::string, int> by_name_;
};

}  // namespace tgmvae::nd
