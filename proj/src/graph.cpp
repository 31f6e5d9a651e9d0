#include "kt/graph.hpp"

#include <algorithm>
#include <cmath>

namespace kt::tensor {

namespace {

constexpr double kExpClamp = 700.0;  // exp/log guard; desk-scale logits never get here
constexpr double kProbEps = 1e-12;

double clamped_exp(double x) { return std::exp(std::clamp(x, -kExpClamp, kExpClamp)); }
double clamped_log(double x) { return std::log(std::max(x, std::exp(-kExpClamp))); }

// Maps the logical softmax axis onto a dimension index for rank 2 [T,R] or
// rank 3 [B,T,R] tensors.
int softmax_dim(const Shape& shape, Axis axis) {
    if (shape.size() == 2) return axis == Axis::time ? 0 : 1;
    if (shape.size() == 3) return axis == Axis::time ? 1 : 2;
    throw ShapeError("softmax_axis expects rank 2 or 3, got " + shape_str(shape));
}

struct AxisView {
    std::int64_t outer, len, inner;
};

AxisView axis_view(const Shape& shape, int dim) {
    AxisView v{1, shape[static_cast<std::size_t>(dim)], 1};
    for (int i = 0; i < dim; ++i) v.outer *= shape[static_cast<std::size_t>(i)];
    for (std::size_t i = static_cast<std::size_t>(dim) + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::input: return "input";
        case Op::constant: return "constant";
        case Op::matmul: return "matmul";
        case Op::add: return "add";
        case Op::mul: return "mul";
        case Op::concat: return "concat";
        case Op::sigmoid: return "sigmoid";
        case Op::tanh_fn: return "tanh";
        case Op::exp_fn: return "exp";
        case Op::log_fn: return "log";
        case Op::softmax: return "softmax_axis";
        case Op::lookup: return "embedding_lookup";
        case Op::dropout: return "dropout";
        case Op::sum_axis: return "sum";
        case Op::mean_all: return "mean";
        case Op::bce_mask: return "bce_with_mask";
        case Op::custom: return "custom";
    }
    return "?";
}

int Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    forward_done_ = false;
    return static_cast<int>(nodes_.size()) - 1;
}

void Graph::check_id(int id) const {
    if (id < 0 || id >= size()) {
        throw ShapeError("node id " + std::to_string(id) + " out of range");
    }
}

int Graph::input(std::string name) {
    for (const auto& existing : input_names_) {
        if (existing == name) throw ShapeError("duplicate input name: " + name);
    }
    input_names_.push_back(name);
    Node n;
    n.op = Op::input;
    n.name = std::move(name);
    return push(std::move(n));
}

int Graph::constant(Tensor v) {
    Node n;
    n.op = Op::constant;
    n.lit = std::move(v);
    return push(std::move(n));
}

int Graph::matmul(int a, int b) {
    check_id(a);
    check_id(b);
    Node n;
    n.op = Op::matmul;
    n.in = {a, b};
    return push(std::move(n));
}

int Graph::add(int a, int b) {
    check_id(a);
    check_id(b);
    Node n;
    n.op = Op::add;
    n.in = {a, b};
    return push(std::move(n));
}

int Graph::mul(int a, int b) {
    check_id(a);
    check_id(b);
    Node n;
    n.op = Op::mul;
    n.in = {a, b};
    return push(std::move(n));
}

int Graph::concat(std::vector<int> parts, int axis) {
    if (parts.empty()) throw ShapeError("concat needs at least one part");
    for (int p : parts) check_id(p);
    Node n;
    n.op = Op::concat;
    n.in = std::move(parts);
    n.axis = axis;
    return push(std::move(n));
}

int Graph::sigmoid(int x) {
    check_id(x);
    Node n;
    n.op = Op::sigmoid;
    n.in = {x};
    return push(std::move(n));
}

int Graph::tanh_fn(int x) {
    check_id(x);
    Node n;
    n.op = Op::tanh_fn;
    n.in = {x};
    return push(std::move(n));
}

int Graph::exp_fn(int x) {
    check_id(x);
    Node n;
    n.op = Op::exp_fn;
    n.in = {x};
    return push(std::move(n));
}

int Graph::log_fn(int x) {
    check_id(x);
    Node n;
    n.op = Op::log_fn;
    n.in = {x};
    return push(std::move(n));
}

int Graph::softmax_axis(int x, Axis axis) {
    check_id(x);
    Node n;
    n.op = Op::softmax;
    n.in = {x};
    n.softmax_axis = axis;
    return push(std::move(n));
}

int Graph::lookup(int table, std::vector<std::int64_t> ids) {
    check_id(table);
    if (ids.empty()) throw ShapeError("embedding_lookup needs at least one id");
    Node n;
    n.op = Op::lookup;
    n.in = {table};
    n.ids = std::move(ids);
    return push(std::move(n));
}

int Graph::dropout(int x, double p, std::uint64_t salt) {
    check_id(x);
    if (p < 0.0 || p >= 1.0) throw ShapeError("dropout rate must be in [0,1)");
    Node n;
    n.op = Op::dropout;
    n.in = {x};
    n.p = p;
    n.salt = salt;
    return push(std::move(n));
}

int Graph::sum_axis(int x, int axis) {
    check_id(x);
    Node n;
    n.op = Op::sum_axis;
    n.in = {x};
    n.axis = axis;
    return push(std::move(n));
}

int Graph::mean_all(int x) {
    check_id(x);
    Node n;
    n.op = Op::mean_all;
    n.in = {x};
    return push(std::move(n));
}

int Graph::bce_mask(int pred, int target, int mask) {
    check_id(pred);
    check_id(target);
    check_id(mask);
    Node n;
    n.op = Op::bce_mask;
    n.in = {pred, target, mask};
    return push(std::move(n));
}

int Graph::custom_unary(int x, std::function<double(double)> fwd,
                        std::function<double(double, double)> dfdx) {
    check_id(x);
    Node n;
    n.op = Op::custom;
    n.in = {x};
    n.custom_fwd = std::move(fwd);
    n.custom_dfdx = std::move(dfdx);
    return push(std::move(n));
}

const Tensor& Graph::value(int id) const {
    check_id(id);
    if (!forward_done_) throw ShapeError("value() before forward()");
    return vals_[static_cast<std::size_t>(id)];
}

const std::vector<double>& Graph::grad_values(int id) const {
    check_id(id);
    return grads_.at(static_cast<std::size_t>(id));
}

namespace {

void eval_node(int id, const Node& n, const Bindings& bindings,
               const rng::CounterRng* dropout_rng, std::vector<Tensor>& vals) {
    auto& out = vals[static_cast<std::size_t>(id)];
    auto in_val = [&](int k) -> const Tensor& { return vals[static_cast<std::size_t>(n.in[static_cast<std::size_t>(k)])]; };

    switch (n.op) {
        case Op::input: {
            auto it = bindings.find(n.name);
            if (it == bindings.end()) throw ShapeError("unbound input: " + n.name);
            out = it->second;
            break;
        }
        case Op::constant:
            out = n.lit;
            break;
        case Op::matmul: {
            const auto& a = in_val(0);
            const auto& b = in_val(1);
            if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
                throw ShapeError("matmul shape mismatch " + shape_str(a.shape) + " x " + shape_str(b.shape));
            }
            const auto m = a.shape[0], k = a.shape[1], p = b.shape[1];
            out = Tensor::zeros({m, p});
            for (std::int64_t i = 0; i < m; ++i) {
                for (std::int64_t kk = 0; kk < k; ++kk) {
                    const double av = a.values[static_cast<std::size_t>(i * k + kk)];
                    if (av == 0.0) continue;
                    const double* brow = &b.values[static_cast<std::size_t>(kk * p)];
                    double* orow = &out.values[static_cast<std::size_t>(i * p)];
                    for (std::int64_t j = 0; j < p; ++j) orow[j] += av * brow[j];
                }
            }
            break;
        }
        case Op::add: {
            const auto& a = in_val(0);
            const auto& b = in_val(1);
            if (!same_shape(a, b)) {
                throw ShapeError("add shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
            }
            out = a;
            for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += b.values[i];
            break;
        }
        case Op::mul: {
            const auto& a = in_val(0);
            const auto& b = in_val(1);
            if (!same_shape(a, b)) {
                throw ShapeError("mul shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
            }
            out = a;
            for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= b.values[i];
            break;
        }
        case Op::concat: {
            const auto& first = in_val(0);
            const int rank = first.rank();
            const int axis = n.axis;
            if (axis < 0 || axis >= rank) throw ShapeError("concat axis out of range");
            Shape out_shape = first.shape;
            for (std::size_t k = 1; k < n.in.size(); ++k) {
                const auto& t = in_val(static_cast<int>(k));
                if (t.rank() != rank) throw ShapeError("concat rank mismatch");
                for (int d = 0; d < rank; ++d) {
                    if (d == axis) continue;
                    if (t.shape[static_cast<std::size_t>(d)] != first.shape[static_cast<std::size_t>(d)]) {
                        throw ShapeError("concat extent mismatch on axis " + std::to_string(d));
                    }
                }
                out_shape[static_cast<std::size_t>(axis)] += t.shape[static_cast<std::size_t>(axis)];
            }
            out = Tensor::zeros(out_shape);
            const auto view = axis_view(out_shape, axis);
            std::int64_t offset = 0;
            for (std::size_t k = 0; k < n.in.size(); ++k) {
                const auto& t = in_val(static_cast<int>(k));
                const auto tlen = t.shape[static_cast<std::size_t>(axis)];
                for (std::int64_t o = 0; o < view.outer; ++o) {
                    for (std::int64_t l = 0; l < tlen; ++l) {
                        const auto src = (o * tlen + l) * view.inner;
                        const auto dst = (o * view.len + offset + l) * view.inner;
                        std::copy_n(&t.values[static_cast<std::size_t>(src)], view.inner,
                                    &out.values[static_cast<std::size_t>(dst)]);
                    }
                }
                offset += tlen;
            }
            break;
        }
        case Op::sigmoid: {
            out = in_val(0);
            for (auto& v : out.values) v = 1.0 / (1.0 + clamped_exp(-v));
            break;
        }
        case Op::tanh_fn: {
            out = in_val(0);
            for (auto& v : out.values) v = std::tanh(v);
            break;
        }
        case Op::exp_fn: {
            out = in_val(0);
            for (auto& v : out.values) v = clamped_exp(v);
            break;
        }
        case Op::log_fn: {
            out = in_val(0);
            for (auto& v : out.values) v = clamped_log(v);
            break;
        }
        case Op::softmax: {
            const auto& x = in_val(0);
            x.require_finite("softmax_axis input");
            const int dim = softmax_dim(x.shape, n.softmax_axis);
            out = x;
            const auto view = axis_view(x.shape, dim);
            for (std::int64_t o = 0; o < view.outer; ++o) {
                for (std::int64_t i = 0; i < view.inner; ++i) {
                    double mx = -HUGE_VAL;
                    for (std::int64_t l = 0; l < view.len; ++l) {
                        mx = std::max(mx, x.values[static_cast<std::size_t>((o * view.len + l) * view.inner + i)]);
                    }
                    double denom = 0.0;
                    for (std::int64_t l = 0; l < view.len; ++l) {
                        const auto idx = static_cast<std::size_t>((o * view.len + l) * view.inner + i);
                        const double e = clamped_exp(x.values[idx] - mx);
                        out.values[idx] = e;
                        denom += e;
                    }
                    for (std::int64_t l = 0; l < view.len; ++l) {
                        out.values[static_cast<std::size_t>((o * view.len + l) * view.inner + i)] /= denom;
                    }
                }
            }
            break;
        }
        case Op::lookup: {
            const auto& table = in_val(0);
            if (table.rank() != 2) throw ShapeError("embedding_lookup table must be rank 2");
            const auto rows = table.shape[0], width = table.shape[1];
            for (auto id2 : n.ids) {
                if (id2 < 0 || id2 >= rows) {
                    throw ShapeError("embedding_lookup id " + std::to_string(id2) + " out of [0," +
                                     std::to_string(rows) + ")");
                }
            }
            out = Tensor::zeros({static_cast<std::int64_t>(n.ids.size()), width});
            for (std::size_t r = 0; r < n.ids.size(); ++r) {
                std::copy_n(&table.values[static_cast<std::size_t>(n.ids[r] * width)], width,
                            &out.values[r * static_cast<std::size_t>(width)]);
            }
            break;
        }
        case Op::dropout: {
            out = in_val(0);
            if (dropout_rng != nullptr && n.p > 0.0) {
                const auto stream = dropout_rng->derive(n.salt);
                const double keep = 1.0 - n.p;
                for (std::size_t i = 0; i < out.values.size(); ++i) {
                    out.values[i] = stream.uniform(i) < keep ? out.values[i] / keep : 0.0;
                }
            }
            break;
        }
        case Op::sum_axis: {
            const auto& x = in_val(0);
            if (n.axis < 0 || n.axis >= x.rank()) throw ShapeError("sum axis out of range");
            Shape out_shape;
            for (int d = 0; d < x.rank(); ++d) {
                if (d != n.axis) out_shape.push_back(x.shape[static_cast<std::size_t>(d)]);
            }
            if (out_shape.empty()) out_shape = {1};
            out = Tensor::zeros(out_shape);
            const auto view = axis_view(x.shape, n.axis);
            for (std::int64_t o = 0; o < view.outer; ++o) {
                for (std::int64_t l = 0; l < view.len; ++l) {
                    for (std::int64_t i = 0; i < view.inner; ++i) {
                        out.values[static_cast<std::size_t>(o * view.inner + i)] +=
                            x.values[static_cast<std::size_t>((o * view.len + l) * view.inner + i)];
                    }
                }
            }
            break;
        }
        case Op::mean_all: {
            const auto& x = in_val(0);
            double s = 0.0;
            for (double v : x.values) s += v;
            out = Tensor::scalar(s / static_cast<double>(x.size()));
            break;
        }
        case Op::bce_mask: {
            const auto& pred = in_val(0);
            const auto& target = in_val(1);
            const auto& mask = in_val(2);
            if (!same_shape(pred, target) || !same_shape(pred, mask)) {
                throw ShapeError("bce_with_mask shape mismatch");
            }
            double num = 0.0, den = 0.0;
            for (std::size_t i = 0; i < pred.values.size(); ++i) {
                if (mask.values[i] == 0.0) continue;
                const double p = std::clamp(pred.values[i], kProbEps, 1.0 - kProbEps);
                const double t = target.values[i];
                num += mask.values[i] * -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
                den += mask.values[i];
            }
            if (den == 0.0) throw ShapeError("bce_with_mask: mask selects nothing");
            out = Tensor::scalar(num / den);
            break;
        }
        case Op::custom: {
            out = in_val(0);
            for (auto& v : out.values) v = n.custom_fwd(v);
            break;
        }
    }
    out.require_finite(std::string(op_name(n.op)) + " node " + std::to_string(id));
}

}  // namespace

Tensor forward(Graph& g, const Bindings& bindings, const rng::CounterRng* dropout_rng) {
    if (g.size() == 0) throw ShapeError("forward on empty graph");
    return forward(g, bindings, g.size() - 1, dropout_rng);
}

Tensor forward(Graph& g, const Bindings& bindings, int output, const rng::CounterRng* dropout_rng) {
    g.check_id(output);
    g.vals_.assign(static_cast<std::size_t>(g.size()), Tensor{});
    for (int id = 0; id < g.size(); ++id) {
        eval_node(id, g.nodes_[static_cast<std::size_t>(id)], bindings, dropout_rng, g.vals_);
    }
    g.forward_done_ = true;
    g.has_rng_ = dropout_rng != nullptr;
    if (dropout_rng != nullptr) g.rng_ = *dropout_rng;
    return g.vals_[static_cast<std::size_t>(output)];
}

namespace {

// Adds the vector-Jacobian product of node `n` (with upstream gradient `go`)
// into the gradient buffers of its inputs.
void backprop_node(const Node& n, const std::vector<Tensor>& vals, int id,
                   std::vector<std::vector<double>>& grads, const rng::CounterRng* dropout_rng) {
    const auto& go = grads[static_cast<std::size_t>(id)];
    const auto& out = vals[static_cast<std::size_t>(id)];
    auto in_val = [&](int k) -> const Tensor& { return vals[static_cast<std::size_t>(n.in[static_cast<std::size_t>(k)])]; };
    auto in_grad = [&](int k) -> std::vector<double>& { return grads[static_cast<std::size_t>(n.in[static_cast<std::size_t>(k)])]; };

    switch (n.op) {
        case Op::input:
        case Op::constant:
            break;
        case Op::matmul: {
            const auto& a = in_val(0);
            const auto& b = in_val(1);
            auto& ga = in_grad(0);
            auto& gb = in_grad(1);
            const auto m = a.shape[0], k = a.shape[1], p = b.shape[1];
            // dA = dC * B^T
            for (std::int64_t i = 0; i < m; ++i) {
                for (std::int64_t kk = 0; kk < k; ++kk) {
                    double s = 0.0;
                    for (std::int64_t j = 0; j < p; ++j) {
                        s += go[static_cast<std::size_t>(i * p + j)] * b.values[static_cast<std::size_t>(kk * p + j)];
                    }
                    ga[static_cast<std::size_t>(i * k + kk)] += s;
                }
            }
            // dB = A^T * dC
            for (std::int64_t kk = 0; kk < k; ++kk) {
                for (std::int64_t i = 0; i < m; ++i) {
                    const double av = a.values[static_cast<std::size_t>(i * k + kk)];
                    if (av == 0.0) continue;
                    for (std::int64_t j = 0; j < p; ++j) {
                        gb[static_cast<std::size_t>(kk * p + j)] += av * go[static_cast<std::size_t>(i * p + j)];
                    }
                }
            }
            break;
        }
        case Op::add: {
            for (int k = 0; k < 2; ++k) {
                auto& gi = in_grad(k);
                for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
            }
            break;
        }
        case Op::mul: {
            const auto& a = in_val(0);
            const auto& b = in_val(1);
            auto& ga = in_grad(0);
            auto& gb = in_grad(1);
            for (std::size_t i = 0; i < go.size(); ++i) {
                ga[i] += b.values[i] * go[i];
                gb[i] += a.values[i] * go[i];
            }
            break;
        }
        case Op::concat: {
            const auto view = axis_view(out.shape, n.axis);
            std::int64_t offset = 0;
            for (std::size_t k = 0; k < n.in.size(); ++k) {
                const auto& t = in_val(static_cast<int>(k));
                auto& gi = in_grad(static_cast<int>(k));
                const auto tlen = t.shape[static_cast<std::size_t>(n.axis)];
                for (std::int64_t o = 0; o < view.outer; ++o) {
                    for (std::int64_t l = 0; l < tlen; ++l) {
                        const auto src = (o * view.len + offset + l) * view.inner;
                        const auto dst = (o * tlen + l) * view.inner;
                        for (std::int64_t i = 0; i < view.inner; ++i) {
                            gi[static_cast<std::size_t>(dst + i)] += go[static_cast<std::size_t>(src + i)];
                        }
                    }
                }
                offset += tlen;
            }
            break;
        }
        case Op::sigmoid: {
            auto& gx = in_grad(0);
            for (std::size_t i = 0; i < go.size(); ++i) {
                const double y = out.values[i];
                gx[i] += y * (1.0 - y) * go[i];
            }
            break;
        }
        case Op::tanh_fn: {
            auto& gx = in_grad(0);
            for (std::size_t i = 0; i < go.size(); ++i) {
                const double y = out.values[i];
                gx[i] += (1.0 - y * y) * go[i];
            }
            break;
        }
        case Op::exp_fn: {
            auto& gx = in_grad(0);
            const auto& x = in_val(0);
            for (std::size_t i = 0; i < go.size(); ++i) {
                // Zero slope outside the clamp window keeps analytic and
                // numeric derivatives consistent.
                const double xv = x.values[i];
                gx[i] += (xv > -kExpClamp && xv < kExpClamp) ? out.values[i] * go[i] : 0.0;
            }
            break;
        }
        case Op::log_fn: {
            auto& gx = in_grad(0);
            const auto& x = in_val(0);
            const double floor = std::exp(-kExpClamp);
            for (std::size_t i = 0; i < go.size(); ++i) {
                gx[i] += x.values[i] > floor ? go[i] / x.values[i] : 0.0;
            }
            break;
        }
        case Op::softmax: {
            auto& gx = in_grad(0);
            const int dim = softmax_dim(out.shape, n.softmax_axis);
            const auto view = axis_view(out.shape, dim);
            for (std::int64_t o = 0; o < view.outer; ++o) {
                for (std::int64_t i = 0; i < view.inner; ++i) {
                    double dot = 0.0;
                    for (std::int64_t l = 0; l < view.len; ++l) {
                        const auto idx = static_cast<std::size_t>((o * view.len + l) * view.inner + i);
                        dot += go[idx] * out.values[idx];
                    }
                    for (std::int64_t l = 0; l < view.len; ++l) {
                        const auto idx = static_cast<std::size_t>((o * view.len + l) * view.inner + i);
                        gx[idx] += out.values[idx] * (go[idx] - dot);
                    }
                }
            }
            break;
        }
        case Op::lookup: {
            const auto& table = in_val(0);
            auto& gt = in_grad(0);
            const auto width = table.shape[1];
            for (std::size_t r = 0; r < n.ids.size(); ++r) {
                const auto row = static_cast<std::size_t>(n.ids[r] * width);
                for (std::int64_t j = 0; j < width; ++j) {
                    gt[row + static_cast<std::size_t>(j)] += go[r * static_cast<std::size_t>(width) + static_cast<std::size_t>(j)];
                }
            }
            break;
        }
        case Op::dropout: {
            auto& gx = in_grad(0);
            if (dropout_rng != nullptr && n.p > 0.0) {
                const auto stream = dropout_rng->derive(n.salt);
                const double keep = 1.0 - n.p;
                for (std::size_t i = 0; i < go.size(); ++i) {
                    gx[i] += stream.uniform(i) < keep ? go[i] / keep : 0.0;
                }
            } else {
                for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
            }
            break;
        }
        case Op::sum_axis: {
            const auto& x = in_val(0);
            auto& gx = in_grad(0);
            const auto view = axis_view(x.shape, n.axis);
            for (std::int64_t o = 0; o < view.outer; ++o) {
                for (std::int64_t l = 0; l < view.len; ++l) {
                    for (std::int64_t i = 0; i < view.inner; ++i) {
                        gx[static_cast<std::size_t>((o * view.len + l) * view.inner + i)] +=
                            go[static_cast<std::size_t>(o * view.inner + i)];
                    }
                }
            }
            break;
        }
        case Op::mean_all: {
            const auto& x = in_val(0);
            auto& gx = in_grad(0);
            const double g = go[0] / static_cast<double>(x.size());
            for (auto& v : gx) v += g;
            break;
        }
        case Op::bce_mask: {
            const auto& pred = in_val(0);
            const auto& target = in_val(1);
            const auto& mask = in_val(2);
            auto& gp = in_grad(0);
            auto& gt = in_grad(1);
            auto& gm = in_grad(2);
            double den = 0.0;
            for (double m : mask.values) den += m;
            const double L = out.values[0];
            for (std::size_t i = 0; i < pred.values.size(); ++i) {
                const double p = std::clamp(pred.values[i], kProbEps, 1.0 - kProbEps);
                const double t = target.values[i];
                const double b = -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
                if (mask.values[i] != 0.0) {
                    gp[i] += go[0] * mask.values[i] * (p - t) / (p * (1.0 - p)) / den;
                    gt[i] += go[0] * mask.values[i] * (std::log(1.0 - p) - std::log(p)) / den;
                }
                gm[i] += go[0] * (b - L) / den;
            }
            break;
        }
        case Op::custom: {
            const auto& x = in_val(0);
            auto& gx = in_grad(0);
            for (std::size_t i = 0; i < go.size(); ++i) {
                gx[i] += n.custom_dfdx(x.values[i], out.values[i]) * go[i];
            }
            break;
        }
    }
}

}  // namespace

std::map<std::string, Tensor> backward(Graph& g, int loss) {
    g.check_id(loss);
    if (!g.forward_done_) throw ShapeError("backward() requires a forward pass");
    if (g.vals_[static_cast<std::size_t>(loss)].size() != 1) {
        throw ShapeError("loss node must be scalar, got shape " +
                         shape_str(g.vals_[static_cast<std::size_t>(loss)].shape));
    }
    g.grads_.assign(static_cast<std::size_t>(g.size()), {});
    for (int id = 0; id < g.size(); ++id) {
        g.grads_[static_cast<std::size_t>(id)].assign(g.vals_[static_cast<std::size_t>(id)].values.size(), 0.0);
    }
    g.grads_[static_cast<std::size_t>(loss)][0] = 1.0;

    const rng::CounterRng* rng = g.has_rng_ ? &g.rng_ : nullptr;
    for (int id = loss; id >= 0; --id) {
        backprop_node(g.nodes_[static_cast<std::size_t>(id)], g.vals_, id, g.grads_, rng);
    }

    std::map<std::string, Tensor> result;
    for (int id = 0; id < g.size(); ++id) {
        const auto& n = g.nodes_[static_cast<std::size_t>(id)];
        if (n.op != Op::input) continue;
        Tensor t = g.vals_[static_cast<std::size_t>(id)];
        t.values = g.grads_[static_cast<std::size_t>(id)];
        t.grad.reset();
        result.emplace(n.name, std::move(t));
    }
    return result;
}

double grad_check(Graph& g, const Bindings& bindings, double eps, const rng::CounterRng* dropout_rng) {
    if (eps <= 0.0) throw NumericError("grad_check eps must be positive");
    forward(g, bindings, dropout_rng);
    auto analytic = backward(g, g.size() - 1);
    double worst = 0.0;
    Bindings work = bindings;
    for (auto& [name, t] : work) {
        const auto& ga = analytic.at(name).values;
        for (std::size_t i = 0; i < t.values.size(); ++i) {
            const double orig = t.values[i];
            t.values[i] = orig + eps;
            const double fp = forward(g, work, dropout_rng).values[0];
            t.values[i] = orig - eps;
            const double fm = forward(g, work, dropout_rng).values[0];
            t.values[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double err = std::abs(ga[i] - numeric) / std::max(1.0, std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    // Restore state for the unperturbed point.
    forward(g, bindings, dropout_rng);
    return worst;
}

}  // namespace kt::tensor
