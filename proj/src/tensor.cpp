#include "casnet/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "casnet/rng.hpp"

namespace casnet {

std::string Shape::str() const {
    return std::to_string(n) + "x" + std::to_string(h) + "x" + std::to_string(w) + "x" +
           std::to_string(c);
}

std::size_t Tensor::check_numel(const Shape& s) {
    if (s.n < 0 || s.h < 0 || s.w < 0 || s.c < 0) {
        throw ShapeError("negative dimension in shape " + s.str());
    }
    return static_cast<std::size_t>(s.numel());
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape_(s) {
    if (static_cast<std::int64_t>(values.size()) != s.numel()) {
        throw ShapeError("data length " + std::to_string(values.size()) +
                         " does not match shape " + s.str());
    }
    data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::full(Shape s, double v) {
    Tensor t(s);
    std::fill(t.raw().begin(), t.raw().end(), v);
    return t;
}

Tensor Tensor::uniform(Shape s, double lo, double hi, Rng& rng) {
    Tensor t(s);
    for (auto& x : t.raw()) x = rng.uniform(lo, hi);
    return t;
}

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (double v : t.data()) m = std::max(m, std::fabs(v));
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!(a.shape() == b.shape())) {
        throw ShapeError("max_abs_diff: shapes " + a.shape().str() + " vs " + b.shape().str());
    }
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace casnet
