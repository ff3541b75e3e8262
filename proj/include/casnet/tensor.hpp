#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace casnet {

class Rng;

/// Shape or dimension errors in tensor operations.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid module / network / run configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A non-finite value appeared where the contract guarantees finiteness.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dataset / file parsing errors.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Rank-4 extent (batch, height, width, channels). Parameter tensors reuse
/// the container with their own dimension meaning, e.g. conv kernels are
/// stored as (kh, kw, in_channels, out_channels).
struct Shape {
    int n = 0;
    int h = 0;
    int w = 0;
    int c = 0;

    std::int64_t numel() const {
        return static_cast<std::int64_t>(n) * h * w * c;
    }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

struct GradNode;

/// Dense rank-4 array of doubles, row-major in (n, h, w, c). Tensors are
/// values: operations never modify their inputs. The data buffer is shared
/// between copies.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape s)
        : shape_(s), data_(std::make_shared<std::vector<double>>(check_numel(s), 0.0)) {}

    Tensor(Shape s, std::vector<double> values);

    static Tensor full(Shape s, double v);
    static Tensor scalar(double v) { return full({1, 1, 1, 1}, v); }

    /// Entries i.i.d. uniform in [lo, hi).
    static Tensor uniform(Shape s, double lo, double hi, Rng& rng);

    const Shape& shape() const { return shape_; }
    std::int64_t numel() const { return shape_.numel(); }
    bool empty() const { return !data_; }

    const std::vector<double>& data() const { return *data_; }

    double at(int n, int h, int w, int c) const { return (*data_)[offset(n, h, w, c)]; }
    double operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

    std::int64_t offset(int n, int h, int w, int c) const {
        return ((static_cast<std::int64_t>(n) * shape_.h + h) * shape_.w + w) * shape_.c + c;
    }

    /// Mutable access to the underlying buffer. Only for owners that have not
    /// yet shared the tensor into a computation (initializers, the optimizer,
    /// gradient accumulation buffers).
    std::vector<double>& raw() { return *data_; }

    std::shared_ptr<const std::vector<double>> buffer() const { return data_; }

    const std::shared_ptr<GradNode>& node() const { return node_; }
    void set_node(std::shared_ptr<GradNode> n) { node_ = std::move(n); }

private:
    static std::size_t check_numel(const Shape& s);

    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
    std::shared_ptr<GradNode> node_;
};

/// Named learnable tensor with a persistent gradient accumulator of the same
/// shape. Gradients are only ever added to; zero_grad() resets them.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param(std::string param_name, Tensor init)
        : name(std::move(param_name)), value(std::move(init)), grad(value.shape()) {}

    void zero_grad() {
        auto& g = grad.raw();
        std::fill(g.begin(), g.end(), 0.0);
    }

    std::int64_t numel() const { return value.numel(); }
};

inline void zero_grads(const std::vector<Param*>& params) {
    for (Param* p : params) p->zero_grad();
}

double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace casnet
