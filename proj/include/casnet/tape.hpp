#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "casnet/tensor.hpp"

namespace casnet {

/// One recorded operation output. Holds the gradient buffer for that output
/// and a closure that scatters it into parent nodes and parameter gradients.
struct GradNode {
    Shape shape;
    std::vector<double> grad;  // lazily sized; empty means "no gradient reached this node"
    std::function<void()> backprop;
    const char* op = "";

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(static_cast<std::size_t>(shape.numel()), 0.0);
        return grad;
    }
};

/// Records executed operations in order and replays them in exact reverse
/// order on backward(). Gradients are accumulated (added) into Param::grad.
/// A Tape constructed with track = false evaluates values only.
///
/// Every operation validates its inputs and checks its output for non-finite
/// values, so a NaN/Inf is reported at the op that produced it.
class Tape {
public:
    explicit Tape(bool track = true) : track_(track) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool tracking() const { return track_; }

    /// Bring a parameter into the computation. backward() accumulates into p.grad.
    Tensor use(Param& p);

    /// Per-channel spatial mean: (N,H,W,C) -> (N,1,1,C).
    Tensor gap(const Tensor& x);

    /// Fully connected layer on channel vectors. x: (N,1,1,Cin),
    /// w: (1,1,Cout,Cin), b: (1,1,1,Cout) -> (N,1,1,Cout).
    Tensor linear(const Tensor& x, Param& w, Param& b);

    Tensor relu(const Tensor& x);
    Tensor sigmoid(const Tensor& x);

    /// Cross-correlation with zero padding. k: (kh,kw,Cin,Cout) with kh, kw odd;
    /// b: (1,1,1,Cout). padding = -1 selects (k-1)/2 ("same" at stride 1).
    Tensor conv2d(const Tensor& x, Param& k, Param& b, int stride = 1, int padding = -1);

    /// (N,H,W,C1) ++ (N,H,W,C2) -> (N,H,W,C1+C2).
    Tensor concat_channels(const Tensor& a, const Tensor& b);

    /// Channel slice [c0, c1).
    Tensor slice_channels(const Tensor& x, int c0, int c1);

    /// Per-position mean and maximum over the channel axis, each (N,H,W,1).
    /// Max routes its gradient to the lowest attaining channel index.
    std::pair<Tensor, Tensor> channel_stats(const Tensor& x);

    /// Elementwise product / sum. H, W, C may broadcast where one side is 1;
    /// batch sizes must match. Gradients sum over broadcast dimensions.
    Tensor broadcast_mul(const Tensor& a, const Tensor& b);
    Tensor add(const Tensor& a, const Tensor& b);

    /// Repeat a batch-1 tensor n times along the batch axis.
    Tensor repeat_batch(const Tensor& x, int n);

    /// Sum of all entries, as a (1,1,1,1) tensor.
    Tensor sum_all(const Tensor& x);

    /// Mean binary cross-entropy from logits, in the stable log-sum-exp form.
    /// targets entries must be exactly 0 or 1.
    Tensor bce_loss(const Tensor& logits, const Tensor& targets);

    /// Reverse pass from a tracked scalar. May be called once per tape.
    void backward(const Tensor& scalar_out);

    /// Distance of this tape's evaluations from the nearest non-smooth point:
    /// min over ReLU inputs of |x| and over channel maxima of the top-two gap.
    /// Finite-difference checks need this to exceed ~10 * eps.
    double smooth_margin() const { return smooth_margin_; }

    /// Margin bookkeeping costs a full pass per ReLU; loops that never read
    /// smooth_margin() can switch it off.
    void set_margin_tracking(bool on) { margins_ = on; }

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    std::shared_ptr<GradNode> new_node(const char* op, Shape s);
    void note_margin(double m) {
        if (m < smooth_margin_) smooth_margin_ = m;
    }

    bool track_;
    bool margins_ = true;
    bool backward_done_ = false;
    std::vector<std::shared_ptr<GradNode>> nodes_;
    double smooth_margin_ = std::numeric_limits<double>::infinity();
};

}  // namespace casnet
