#ifndef SCDD_TENSOR_HPP
#define SCDD_TENSOR_HPP

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

/**
 * @file tensor.hpp
 * @brief Dense row-major tensor of 64-bit floats.
 */

namespace scdd {

using Shape = std::vector<std::size_t>;

/**
 * @brief Allocator returning 64-byte aligned blocks.
 *
 * Vectorized kernels pick their code path from the data address, so aligned storage keeps results independent of where a tensor lives.
 */
template<typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{ 64 };

    AlignedAllocator() = default;

    template<typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }

    void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }

    template<typename U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::string shape_string(const Shape& shape);

std::size_t shape_size(const Shape& shape);

/**
 * @brief Dense row-major array of doubles.
 *
 * Value type: copies are deep.
 * Most of the library works on rank-2 tensors; a scalar is a 1x1 matrix.
 */
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0);

    Tensor(Shape shape, std::vector<double> values);

    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0) {
        return Tensor(Shape{ rows, cols }, fill);
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
        return Tensor(Shape{ rows, cols }, std::vector<double>(values));
    }

    static Tensor scalar(double value) {
        return Tensor(Shape{ 1, 1 }, value);
    }

    const Shape& shape() const { return my_shape; }

    std::size_t rank() const { return my_shape.size(); }

    std::size_t size() const { return my_values.size(); }

    bool empty() const { return my_values.empty(); }

    /** Row count; requires rank 2. */
    std::size_t rows() const;

    /** Column count; requires rank 2. */
    std::size_t cols() const;

    bool is_scalar() const { return my_values.size() == 1; }

    double item() const;

    double& operator()(std::size_t r, std::size_t c) { return my_values[r * my_shape[1] + c]; }

    double operator()(std::size_t r, std::size_t c) const { return my_values[r * my_shape[1] + c]; }

    double& operator[](std::size_t i) { return my_values[i]; }

    double operator[](std::size_t i) const { return my_values[i]; }

    std::span<double> data() { return my_values; }

    std::span<const double> data() const { return my_values; }

    const Storage& values() const { return my_values; }

    std::span<const double> row(std::size_t r) const { return data().subspan(r * cols(), cols()); }

    std::span<double> row(std::size_t r) { return data().subspan(r * cols(), cols()); }

    bool all_finite() const;

    /** Bitwise equality of shape and values. */
    bool identical(const Tensor& other) const;

    void fill(double value);

    Tensor& operator+=(const Tensor& other);

private:
    Shape my_shape;
    Storage my_values;
};

/** Rows `indices` of a rank-2 tensor, in the given order. */
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);

/** Mean of all entries. */
double mean(const Tensor& x);

/** Population variance of all entries. */
double variance(const Tensor& x);

}

#endif
