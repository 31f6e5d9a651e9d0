#include "kt/tensor.hpp"

#include <cmath>
#include <sstream>

namespace kt::tensor {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("tensor value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
}

Tensor Tensor::zeros(Shape s) {
    auto n = numel(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
}

Tensor Tensor::full(Shape s, double v) {
    auto n = numel(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), v));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::row(std::vector<double> v) {
    Shape s{1, static_cast<std::int64_t>(v.size())};
    return Tensor(std::move(s), std::move(v));
}

double& Tensor::at2(std::int64_t i, std::int64_t j) {
    return values[static_cast<std::size_t>(i * shape[1] + j)];
}

double Tensor::at2(std::int64_t i, std::int64_t j) const {
    return values[static_cast<std::size_t>(i * shape[1] + j)];
}

bool Tensor::all_finite() const {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::require_finite(const std::string& context) const {
    if (!all_finite()) {
        throw NumericError("non-finite value in " + context);
    }
}

void Tensor::ensure_grad() {
    if (!grad) {
        grad = std::vector<double>(values.size(), 0.0);
    }
}

void Tensor::clear_grad() { grad.reset(); }

void Tensor::accumulate_grad(const std::vector<double>& g) {
    if (g.size() != values.size()) {
        throw ShapeError("gradient size mismatch");
    }
    ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
        (*grad)[i] += g[i];
    }
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

}  // namespace kt::tensor
