#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latflow/rng.hpp"

namespace latflow {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool shape_eq(const Shape& a, const Shape& b);

/// Dense row-major float32 tensor. Rank 0 means scalar (numel 1).
struct Tensor {
    Shape shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(Shape s);

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    std::int64_t dim(int i) const;

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, float v);
    static Tensor scalar(float v);
    static Tensor from(Shape s, std::vector<float> v);
    static Tensor randn(Rng& rng, Shape s, float stddev = 1.0f);
    static Tensor uniform(Rng& rng, Shape s, float lo, float hi);
};

/// Row-major strides for a shape.
std::vector<std::int64_t> row_strides(const Shape& s);

} // namespace latflow
