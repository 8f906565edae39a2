#include "scdd/tensor.hpp"

#include "scdd/error.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

namespace scdd {

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            out += "x";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{ 1 }, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : my_shape(std::move(shape)), my_values(shape_size(my_shape), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : my_shape(std::move(shape)), my_values(values.begin(), values.end()) {
    if (my_values.size() != shape_size(my_shape)) {
        throw ShapeError("tensor of shape " + shape_string(my_shape) + " given " + std::to_string(my_values.size()) + " values");
    }
}

std::size_t Tensor::rows() const {
    if (my_shape.size() != 2) {
        throw ShapeError("expected a matrix, got shape " + shape_string(my_shape));
    }
    return my_shape[0];
}

std::size_t Tensor::cols() const {
    if (my_shape.size() != 2) {
        throw ShapeError("expected a matrix, got shape " + shape_string(my_shape));
    }
    return my_shape[1];
}

double Tensor::item() const {
    if (my_values.size() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_string(my_shape));
    }
    return my_values[0];
}

bool Tensor::all_finite() const {
    for (double v : my_values) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

bool Tensor::identical(const Tensor& other) const {
    return my_shape == other.my_shape
        && (my_values.empty() || std::memcmp(my_values.data(), other.my_values.data(), my_values.size() * sizeof(double)) == 0);
}

void Tensor::fill(double value) {
    std::fill(my_values.begin(), my_values.end(), value);
}

Tensor& Tensor::operator+=(const Tensor& other) {
    if (my_shape != other.my_shape) {
        throw ShapeError("cannot add " + shape_string(other.my_shape) + " into " + shape_string(my_shape));
    }
    for (std::size_t i = 0; i < my_values.size(); ++i) {
        my_values[i] += other.my_values[i];
    }
    return *this;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
    const std::size_t nc = x.cols();
    Tensor out = Tensor::matrix(indices.size(), nc);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= x.rows()) {
            throw ShapeError("row index " + std::to_string(indices[i]) + " out of range for " + shape_string(x.shape()));
        }
        auto src = x.row(indices[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

double mean(const Tensor& x) {
    if (x.empty()) {
        return 0;
    }
    double s = 0;
    for (double v : x.data()) {
        s += v;
    }
    return s / static_cast<double>(x.size());
}

double variance(const Tensor& x) {
    if (x.empty()) {
        return 0;
    }
    const double m = mean(x);
    double s = 0;
    for (double v : x.data()) {
        s += (v - m) * (v - m);
    }
    return s / static_cast<double>(x.size());
}

}
