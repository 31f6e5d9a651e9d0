#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kt/errors.hpp"

namespace kt::tensor {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles with an optional same-shape gradient slot.
struct Tensor {
    Shape shape;
    std::vector<double> values;
    std::optional<std::vector<double>> grad;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> v);

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double v);
    static Tensor scalar(double v);
    static Tensor row(std::vector<double> v);  // shape [1, n]

    std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    double& at2(std::int64_t i, std::int64_t j);
    double at2(std::int64_t i, std::int64_t j) const;

    bool all_finite() const;
    void require_finite(const std::string& context) const;

    void ensure_grad();
    void clear_grad();
    void accumulate_grad(const std::vector<double>& g);
};

bool same_shape(const Tensor& a, const Tensor& b);

}  // namespace kt::tensor
