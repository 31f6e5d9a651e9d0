#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "kt/rng.hpp"
#include "kt/tensor.hpp"

namespace kt::tensor {

// Axis selector for softmax over [T, R] or [B, T, R] score tensors. TIME
// normalizes each path slot across steps (the look-ahead variant); PATH
// normalizes within a single step.
enum class Axis { time, path };

enum class Op {
    input,
    constant,
    matmul,
    add,
    mul,
    concat,
    sigmoid,
    tanh_fn,
    exp_fn,
    log_fn,
    softmax,
    lookup,
    dropout,
    sum_axis,
    mean_all,
    bce_mask,
    custom,
};

const char* op_name(Op op);

struct Node {
    Op op = Op::constant;
    std::vector<int> in;
    std::string name;            // input binding name
    Tensor lit;                  // constant payload
    int axis = 0;                // concat / sum_axis
    Axis softmax_axis = Axis::path;
    std::vector<std::int64_t> ids;  // lookup row indices
    double p = 0.0;              // dropout rate
    std::uint64_t salt = 0;      // dropout stream id
    // Test hook: custom elementwise op with caller-supplied derivative.
    std::function<double(double)> custom_fwd;
    std::function<double(double, double)> custom_dfdx;  // (x, y) -> dy/dx
};

using Bindings = std::map<std::string, Tensor>;

// Deferred computation graph. Nodes are appended in topological order by
// construction; forward evaluates them in order, backward walks them in
// reverse. A graph instance is confined to one thread.
class Graph {
public:
    int input(std::string name);
    int constant(Tensor v);
    int matmul(int a, int b);
    int add(int a, int b);
    int mul(int a, int b);
    int concat(std::vector<int> parts, int axis);
    int sigmoid(int x);
    int tanh_fn(int x);
    int exp_fn(int x);
    int log_fn(int x);
    int softmax_axis(int x, Axis axis);
    int lookup(int table, std::vector<std::int64_t> ids);
    int dropout(int x, double p, std::uint64_t salt);
    int sum_axis(int x, int axis);
    int mean_all(int x);
    // Masked binary cross-entropy, mean over mask: sum(mask * bce) / sum(mask).
    int bce_mask(int pred, int target, int mask);
    int custom_unary(int x, std::function<double(double)> fwd,
                     std::function<double(double, double)> dfdx);

    int size() const { return static_cast<int>(nodes_.size()); }
    const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& input_names() const { return input_names_; }

    bool forward_done() const { return forward_done_; }
    const Tensor& value(int id) const;
    const std::vector<double>& grad_values(int id) const;

private:
    friend Tensor forward(Graph&, const Bindings&, const rng::CounterRng*);
    friend Tensor forward(Graph&, const Bindings&, int, const rng::CounterRng*);
    friend std::map<std::string, Tensor> backward(Graph&, int);

    int push(Node n);
    void check_id(int id) const;

    std::vector<Node> nodes_;
    std::vector<std::string> input_names_;
    std::vector<Tensor> vals_;
    std::vector<std::vector<double>> grads_;
    bool forward_done_ = false;
    // Dropout RNG of the last forward pass; backward replays the same masks.
    bool has_rng_ = false;
    rng::CounterRng rng_{};
};

// Evaluates every node given bindings for all inputs; returns the value of the
// last node. Deterministic given bindings and the dropout RNG.
Tensor forward(Graph& g, const Bindings& bindings, const rng::CounterRng* dropout_rng = nullptr);
Tensor forward(Graph& g, const Bindings& bindings, int output, const rng::CounterRng* dropout_rng = nullptr);

// Reverse accumulation from a scalar loss node; returns a gradient tensor for
// every named input. forward() must have run on this graph.
std::map<std::string, Tensor> backward(Graph& g, int loss);

// Max over all inputs and elements of |analytic - central difference| /
// max(1, |central difference|), with the final node as the scalar objective.
double grad_check(Graph& g, const Bindings& bindings, double eps,
                  const rng::CounterRng* dropout_rng = nullptr);

}  // namespace kt::tensor
