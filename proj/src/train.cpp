#include "casnet/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>
#include <optional>

#include "casnet/tape.hpp"

namespace casnet {

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (lr <= 0.0) throw ConfigError("train: lr must be positive");
    if (!(lr_after < lr)) throw ConfigError("train: lr_after must be below lr");
    if (lr_after <= 0.0) throw ConfigError("train: lr_after must be positive");
    if (lr_decay_epoch <= 0 || lr_decay_epoch >= epochs)
        throw ConfigError("train: lr_decay_epoch must lie strictly inside (0, epochs)");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must be in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (r < 1) throw ConfigError("train: reduction ratio must be >= 1");
}

double lr_schedule(const TrainConfig& cfg, int epoch) {
    return epoch < cfg.lr_decay_epoch ? cfg.lr : cfg.lr_after;
}

std::vector<Param*> TrainedModel::params() { return net ? net->params() : hard->params(); }

std::pair<Tensor, Tensor> TrainedModel::forward(Tape& tape, const Tensor& images, int labels_a) {
    if (net) {
        ForwardResult r = net->forward(tape, images);
        return {r.logits_a, r.logits_b};
    }
    Tensor all = hard->forward(tape, images);
    return {tape.slice_channels(all, 0, labels_a),
            tape.slice_channels(all, labels_a, all.shape().c)};
}

namespace {

TrainedModel build_model(const TrainConfig& cfg, int labels_a, int labels_b) {
    TrainedModel m;
    const std::uint64_t net_seed = derive_seed(cfg.seed, 1);
    if (cfg.sharing == SharingKind::Hard) {
        m.hard = HardShareNet::build(SharingNetConfig{}.stages, 3, labels_a + labels_b, net_seed);
    } else {
        SharingNetConfig nc;
        nc.sharing = cfg.sharing;
        nc.insertion_mask = cfg.sharing == SharingKind::None
                                ? std::vector<bool>(nc.stages.size(), false)
                                : cfg.insertion_mask;
        nc.ablation = cfg.ablation;
        nc.reduction = cfg.r;
        nc.labels_a = labels_a;
        nc.labels_b = labels_b;
        m.net = SharingNetwork::build(nc, net_seed);
    }
    return m;
}

Tensor batch_images(const Dataset& ds, const std::vector<int>& order, int lo, int hi) {
    const Shape one = ds.samples[static_cast<size_t>(order[static_cast<size_t>(lo)])].image.shape();
    Tensor out(Shape{hi - lo, one.h, one.w, one.c});
    auto& dst = out.raw();
    const size_t stride = static_cast<size_t>(one.numel());
    for (int i = lo; i < hi; ++i) {
        const Tensor& img = ds.samples[static_cast<size_t>(order[static_cast<size_t>(i)])].image;
        if (!(img.shape() == one))
            throw ShapeError("train: sample image shapes disagree: " + img.shape().str() +
                             " vs " + one.str());
        std::memcpy(dst.data() + static_cast<size_t>(i - lo) * stride, img.data().data(),
                    stride * sizeof(double));
    }
    return out;
}

Tensor batch_targets(const Dataset& ds, const std::vector<int>& order, int lo, int hi,
                     const std::vector<int>& attrs) {
    Tensor out(Shape{hi - lo, 1, 1, static_cast<int>(attrs.size())});
    auto& dst = out.raw();
    for (int i = lo; i < hi; ++i) {
        const auto& labels = ds.samples[static_cast<size_t>(order[static_cast<size_t>(i)])].labels;
        for (size_t j = 0; j < attrs.size(); ++j)
            dst[static_cast<size_t>(i - lo) * attrs.size() + j] =
                labels[static_cast<size_t>(attrs[j])];
    }
    return out;
}

// Mean stable bce of one channel range of a logits tensor, for logging only.
double slice_bce(const Tensor& logits, const Tensor& targets, int from, int count) {
    const Shape& s = logits.shape();
    double acc = 0.0;
    for (int n = 0; n < s.n; ++n)
        for (int c = from; c < from + count; ++c) {
            const double z = logits.at(n, 0, 0, c);
            const double t = targets.at(n, 0, 0, c);
            acc += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::fabs(z)));
        }
    return acc / (static_cast<double>(s.n) * count);
}

/// Scores for a whole split, assembled back into original attribute order.
Tensor eval_scores(TrainedModel& m, const Dataset& ds, const GroupingScheme& g, int batch_size) {
    const int n = ds.size();
    const int L = ds.num_attributes();
    Tensor scores(Shape{n, 1, 1, L});
    auto& out = scores.raw();
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int lo = 0; lo < n; lo += batch_size) {
        const int hi = std::min(n, lo + batch_size);
        Tape tape(false);
        auto [za, zb] = m.forward(tape, batch_images(ds, order, lo, hi), int(g.task_a.size()));
        const Tensor pa = tape.sigmoid(za);
        const Tensor pb = tape.sigmoid(zb);
        for (int i = lo; i < hi; ++i) {
            for (size_t j = 0; j < g.task_a.size(); ++j)
                out[static_cast<size_t>(i) * L + g.task_a[j]] =
                    pa.at(i - lo, 0, 0, static_cast<int>(j));
            for (size_t j = 0; j < g.task_b.size(); ++j)
                out[static_cast<size_t>(i) * L + g.task_b[j]] =
                    pb.at(i - lo, 0, 0, static_cast<int>(j));
        }
    }
    return scores;
}

std::vector<std::uint8_t> flat_targets(const Dataset& ds) {
    std::vector<std::uint8_t> t;
    t.reserve(static_cast<size_t>(ds.size()) * ds.num_attributes());
    for (const Sample& s : ds.samples) t.insert(t.end(), s.labels.begin(), s.labels.end());
    return t;
}

}  // namespace

RunRecord train(const TrainConfig& cfg, const SplitResult& data, TrainedModel* out_model) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    if (data.train.size() == 0 || data.val.size() == 0 || data.test.size() == 0)
        throw ConfigError("train: all three splits must be non-empty");
    const int L = data.train.num_attributes();
    if (L < 2) throw ConfigError("train: need at least 2 attributes to form two tasks");
    if (data.val.num_attributes() != L || data.test.num_attributes() != L)
        throw ConfigError("train: splits disagree on attribute count");

    RunRecord rec;
    rec.config = cfg;
    rec.grouping = group_attributes(data.train.attributes, cfg.grouping, cfg.seed);
    const int la = static_cast<int>(rec.grouping.task_a.size());
    const int lb = static_cast<int>(rec.grouping.task_b.size());

    TrainedModel m = build_model(cfg, la, lb);
    const std::vector<Param*> ps = m.params();
    std::vector<std::vector<double>> velocity;
    velocity.reserve(ps.size());
    for (Param* p : ps) velocity.emplace_back(p->value.data().size(), 0.0);

    // The hard model's single head concatenates task A then task B.
    std::vector<int> hard_order = rec.grouping.task_a;
    hard_order.insert(hard_order.end(), rec.grouping.task_b.begin(), rec.grouping.task_b.end());

    const auto val_targets = flat_targets(data.val);
    const auto test_targets = flat_targets(data.test);

    const int n_train = data.train.size();
    std::vector<int> order(static_cast<size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);

    double best_f1 = -1.0;
    std::vector<std::vector<double>> best_params;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_schedule(cfg, epoch);
        Rng shuffle_rng(derive_seed(cfg.seed, 0x600 + static_cast<std::uint64_t>(epoch)));
        shuffle(order, shuffle_rng);

        double sum_a = 0.0, sum_b = 0.0;
        for (int lo = 0; lo < n_train; lo += cfg.batch_size) {
            const int hi = std::min(n_train, lo + cfg.batch_size);
            const int bs = hi - lo;
            try {
                Tape tape;
                tape.set_margin_tracking(false);
                const Tensor images = batch_images(data.train, order, lo, hi);
                Tensor total;
                if (m.is_hard()) {
                    const Tensor targets = batch_targets(data.train, order, lo, hi, hard_order);
                    Tensor logits = m.hard->forward(tape, images);
                    total = tape.bce_loss(logits, targets);
                    sum_a += slice_bce(logits, targets, 0, la) * bs;
                    sum_b += slice_bce(logits, targets, la, lb) * bs;
                } else {
                    ForwardResult r = m.net->forward(tape, images);
                    const Tensor ta = batch_targets(data.train, order, lo, hi, rec.grouping.task_a);
                    const Tensor tb = batch_targets(data.train, order, lo, hi, rec.grouping.task_b);
                    const Tensor loss_a = tape.bce_loss(r.logits_a, ta);
                    const Tensor loss_b = tape.bce_loss(r.logits_b, tb);
                    total = tape.add(loss_a, loss_b);
                    sum_a += loss_a.at(0, 0, 0, 0) * bs;
                    sum_b += loss_b.at(0, 0, 0, 0) * bs;
                }
                if (!std::isfinite(total.at(0, 0, 0, 0)))
                    throw NumericError("loss is not finite");
                tape.backward(total);
            } catch (const NumericError& e) {
                throw NumericError("train: diverged at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(lo / cfg.batch_size) + ": " +
                                   e.what());
            }
            for (size_t pi = 0; pi < ps.size(); ++pi) {
                auto& value = ps[pi]->value.raw();
                const auto& grad = ps[pi]->grad.data();
                auto& vel = velocity[pi];
                for (size_t k = 0; k < value.size(); ++k) {
                    vel[k] = cfg.momentum * vel[k] -
                             lr * (grad[k] + cfg.weight_decay * value[k]);
                    value[k] += vel[k];
                }
                ps[pi]->zero_grad();
            }
        }

        EpochLog log;
        log.loss_a = sum_a / n_train;
        log.loss_b = sum_b / n_train;
        try {
            log.val = evaluate(eval_scores(m, data.val, rec.grouping, cfg.batch_size), val_targets);
        } catch (const NumericError& e) {
            throw NumericError("train: diverged at epoch " + std::to_string(epoch) +
                               " (validation pass): " + e.what());
        }
        if (log.val.instance_f1 > best_f1) {
            best_f1 = log.val.instance_f1;
            rec.best_epoch = epoch;
            best_params.clear();
            for (Param* p : ps) best_params.push_back(p->value.data());
        }
        rec.epochs.push_back(std::move(log));
    }

    for (size_t pi = 0; pi < ps.size(); ++pi) ps[pi]->value.raw() = best_params[pi];
    rec.test = evaluate(eval_scores(m, data.test, rec.grouping, cfg.batch_size), test_targets);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (out_model) *out_model = std::move(m);
    return rec;
}

}  // namespace casnet
