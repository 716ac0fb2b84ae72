#include "latflow/tensor.hpp"

#include <sstream>

#include "latflow/error.hpp"

namespace latflow {

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) {
        if (d < 0) throw ShapeError("negative dimension in " + shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

bool shape_eq(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
}

std::int64_t Tensor::dim(int i) const {
    if (i < 0) i += rank();
    if (i < 0 || i >= rank()) throw ShapeError("dim index out of range for " + shape_str(shape));
    return shape[static_cast<std::size_t>(i)];
}

Tensor Tensor::zeros(Shape s) { return Tensor(std::move(s)); }

Tensor Tensor::full(Shape s, float v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

Tensor Tensor::scalar(float v) {
    Tensor t{};
    t.data.assign(1, v);
    return t;
}

Tensor Tensor::from(Shape s, std::vector<float> v) {
    if (shape_numel(s) != static_cast<std::int64_t>(v.size()))
        throw ShapeError("from(): " + shape_str(s) + " does not hold " + std::to_string(v.size()) + " values");
    Tensor t{};
    t.shape = std::move(s);
    t.data = std::move(v);
    return t;
}

Tensor Tensor::randn(Rng& rng, Shape s, float stddev) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = static_cast<float>(rng.normal() * stddev);
    return t;
}

Tensor Tensor::uniform(Rng& rng, Shape s, float lo, float hi) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

std::vector<std::int64_t> row_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
        st[static_cast<std::size_t>(i)] = st[static_cast<std::size_t>(i) + 1] * s[static_cast<std::size_t>(i) + 1];
    return st;
}

} // namespace latflow
