#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "casnet/checkpoint.hpp"
#include "casnet/data.hpp"
#include "casnet/tape.hpp"
#include "casnet/train.hpp"

using namespace casnet;

namespace {

// Small splits train fast; 16x16 keeps all four stride-2 stages valid.
SplitResult tiny_splits(int n, std::uint64_t seed = 5) {
    const Dataset ds = generate_synthetic(n, default_attribute_specs(), 0.4, 0.05, seed, 16, 16);
    return split(ds, 0.6, 0.2, 0.2, seed);
}

TrainConfig tiny_config(SharingKind kind, int epochs = 2) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.lr_decay_epoch = epochs - 1;
    cfg.batch_size = 8;
    cfg.r = 2;
    cfg.seed = 11;
    cfg.sharing = kind;
    return cfg;
}

bool same_report(const MetricReport& a, const MetricReport& b) {
    if (a.mA != b.mA || a.instance_accuracy != b.instance_accuracy ||
        a.instance_precision != b.instance_precision || a.instance_recall != b.instance_recall ||
        a.instance_f1 != b.instance_f1)
        return false;
    if (a.per_attribute.size() != b.per_attribute.size()) return false;
    for (size_t i = 0; i < a.per_attribute.size(); ++i) {
        if (a.per_attribute[i].tp != b.per_attribute[i].tp ||
            a.per_attribute[i].fp != b.per_attribute[i].fp ||
            a.per_attribute[i].tn != b.per_attribute[i].tn ||
            a.per_attribute[i].fn != b.per_attribute[i].fn)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("learning rate schedule steps once at the decay epoch") {
    TrainConfig cfg;  // defaults: lr 0.02 -> 0.002 at epoch 40 of 70
    CHECK(lr_schedule(cfg, 0) == 0.02);
    CHECK(lr_schedule(cfg, 39) == 0.02);
    CHECK(lr_schedule(cfg, 40) == 0.002);
    CHECK(lr_schedule(cfg, 69) == 0.002);

    int steps = 0;
    for (int e = 1; e < cfg.epochs; ++e)
        if (lr_schedule(cfg, e) != lr_schedule(cfg, e - 1)) ++steps;
    CHECK(steps == 1);
}

TEST_CASE("train config validation") {
    const auto bad = [](auto&& tweak) {
        TrainConfig cfg;
        tweak(cfg);
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    };
    bad([](TrainConfig& c) { c.epochs = 0; });
    bad([](TrainConfig& c) { c.batch_size = 0; });
    bad([](TrainConfig& c) { c.lr = 0.0; });
    bad([](TrainConfig& c) { c.lr = -0.1; });
    bad([](TrainConfig& c) { c.lr_after = 0.02; });   // must sit below lr
    bad([](TrainConfig& c) { c.lr_after = -0.001; });
    bad([](TrainConfig& c) { c.lr_decay_epoch = 0; });
    bad([](TrainConfig& c) { c.lr_decay_epoch = 70; });
    bad([](TrainConfig& c) { c.momentum = 1.0; });
    bad([](TrainConfig& c) { c.momentum = -0.1; });
    bad([](TrainConfig& c) { c.weight_decay = -1e-6; });
    bad([](TrainConfig& c) { c.r = 0; });
    TrainConfig ok;
    CHECK_NOTHROW(ok.validate());
}

TEST_CASE("one epoch on a 16-sample set decreases the training loss") {
    const Dataset ds = generate_synthetic(24, default_attribute_specs(), 0.4, 0.05, 5, 16, 16);
    SplitResult data = split(ds, 0.68, 0.16, 0.16, 5);
    REQUIRE(data.train.size() == 16);

    TrainConfig cfg = tiny_config(SharingKind::None);
    const RunRecord rec = train(cfg, data);

    // Reconstruct the untouched network and measure its loss on the same set.
    const GroupingScheme g = group_attributes(data.train.attributes, cfg.grouping, cfg.seed);
    SharingNetConfig nc;
    nc.sharing = SharingKind::None;
    nc.insertion_mask = {false, false, false, false};
    nc.labels_a = static_cast<int>(g.task_a.size());
    nc.labels_b = static_cast<int>(g.task_b.size());
    nc.reduction = cfg.r;
    SharingNetwork fresh = SharingNetwork::build(nc, derive_seed(cfg.seed, 1));

    const int n = data.train.size();
    const int h = data.train.height, w = data.train.width;
    Tensor images(Shape{n, h, w, 3});
    Tensor ta(Shape{n, 1, 1, nc.labels_a});
    Tensor tb(Shape{n, 1, 1, nc.labels_b});
    {
        auto& ib = images.raw();
        auto& ab = ta.raw();
        auto& bb = tb.raw();
        for (int i = 0; i < n; ++i) {
            const Sample& s = data.train.samples[static_cast<size_t>(i)];
            const auto& src = s.image.data();
            std::copy(src.begin(), src.end(), ib.begin() + static_cast<size_t>(i) * src.size());
            for (size_t j = 0; j < g.task_a.size(); ++j)
                ab[static_cast<size_t>(i) * g.task_a.size() + j] = s.labels[g.task_a[j]];
            for (size_t j = 0; j < g.task_b.size(); ++j)
                bb[static_cast<size_t>(i) * g.task_b.size() + j] = s.labels[g.task_b[j]];
        }
    }
    Tape tape(false);
    ForwardResult out = fresh.forward(tape, images);
    const double init_loss = tape.bce_loss(out.logits_a, ta).at(0, 0, 0, 0) +
                             tape.bce_loss(out.logits_b, tb).at(0, 0, 0, 0);

    REQUIRE(rec.epochs.size() == 2);
    CHECK(rec.epochs[0].loss_a + rec.epochs[0].loss_b < init_loss);
}

TEST_CASE("training is bit-deterministic in the seed") {
    SplitResult data = tiny_splits(30);
    TrainConfig cfg = tiny_config(SharingKind::CrossStitch, 3);

    const RunRecord a = train(cfg, data);
    const RunRecord b = train(cfg, data);

    REQUIRE(a.epochs.size() == b.epochs.size());
    for (size_t e = 0; e < a.epochs.size(); ++e) {
        CHECK(a.epochs[e].loss_a == b.epochs[e].loss_a);
        CHECK(a.epochs[e].loss_b == b.epochs[e].loss_b);
        CHECK(same_report(a.epochs[e].val, b.epochs[e].val));
    }
    CHECK(a.best_epoch == b.best_epoch);
    CHECK(same_report(a.test, b.test));

    TrainConfig other = cfg;
    other.seed = 12;
    const RunRecord c = train(other, data);
    bool differs = c.best_epoch != a.best_epoch;
    for (size_t e = 0; e < a.epochs.size() && !differs; ++e)
        differs = c.epochs[e].loss_a != a.epochs[e].loss_a;
    CHECK(differs);
}

TEST_CASE("run record shape and metric ranges") {
    SplitResult data = tiny_splits(24);
    TrainConfig cfg = tiny_config(SharingKind::CAS, 3);
    const RunRecord rec = train(cfg, data);

    CHECK(rec.epochs.size() == static_cast<size_t>(cfg.epochs));
    CHECK(rec.best_epoch >= 0);
    CHECK(rec.best_epoch < cfg.epochs);
    CHECK(rec.grouping.kind == GroupingKind::GlobalLocal);
    for (const EpochLog& e : rec.epochs) {
        CHECK(std::isfinite(e.loss_a));
        CHECK(std::isfinite(e.loss_b));
        CHECK(e.val.instance_f1 >= 0.0);
        CHECK(e.val.instance_f1 <= 1.0);
    }
    CHECK(rec.test.mA >= 0.0);
    CHECK(rec.test.mA <= 1.0);

    // The highest validation F1 seen must belong to the recorded best epoch.
    double best = -1.0;
    int arg = -1;
    for (size_t e = 0; e < rec.epochs.size(); ++e) {
        if (rec.epochs[e].val.instance_f1 > best) {
            best = rec.epochs[e].val.instance_f1;
            arg = static_cast<int>(e);
        }
    }
    CHECK(rec.best_epoch == arg);
}

TEST_CASE("hard sharing trains through the single-stream path") {
    SplitResult data = tiny_splits(24);
    TrainConfig cfg = tiny_config(SharingKind::Hard, 2);

    TrainedModel model;
    const RunRecord rec = train(cfg, data, &model);
    CHECK(model.is_hard());
    CHECK(rec.epochs.size() == 2);
    for (const EpochLog& e : rec.epochs) {
        CHECK(std::isfinite(e.loss_a));
        CHECK(std::isfinite(e.loss_b));
    }

    // Split heads agree with the grouping sizes.
    const int la = static_cast<int>(rec.grouping.task_a.size());
    const int lb = static_cast<int>(rec.grouping.task_b.size());
    Tensor batch(Shape{2, data.train.height, data.train.width, 3});
    Tape tape(false);
    auto [za, zb] = model.forward(tape, batch, la);
    CHECK(za.shape() == Shape{2, 1, 1, la});
    CHECK(zb.shape() == Shape{2, 1, 1, lb});
}

TEST_CASE("divergence aborts with epoch and batch diagnostics") {
    SplitResult data = tiny_splits(24);
    TrainConfig cfg = tiny_config(SharingKind::None, 3);
    // large enough that the second forward overflows to inf instead of
    // merely saturating the relus
    cfg.lr = 1e160;
    cfg.lr_after = 1e150;

    bool threw = false;
    try {
        train(cfg, data);
    } catch (const NumericError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("diverged at epoch") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("trained parameters survive a checkpoint round trip") {
    SplitResult data = tiny_splits(24);
    TrainConfig cfg = tiny_config(SharingKind::CAS, 2);

    TrainedModel model;
    train(cfg, data, &model);
    REQUIRE_FALSE(model.is_hard());

    const auto path = std::filesystem::temp_directory_path() / "casnet_train_ckpt.txt";
    save_checkpoint(path.string(), model.params());

    // An identically configured fresh build accepts the file and reproduces
    // the trained model's outputs exactly.
    const GroupingScheme g = group_attributes(data.train.attributes, cfg.grouping, cfg.seed);
    SharingNetConfig nc;
    nc.sharing = SharingKind::CAS;
    nc.labels_a = static_cast<int>(g.task_a.size());
    nc.labels_b = static_cast<int>(g.task_b.size());
    nc.reduction = cfg.r;
    SharingNetwork restored = SharingNetwork::build(nc, derive_seed(cfg.seed, 1));
    load_checkpoint(path.string(), restored.params());

    Tensor batch(Shape{3, data.train.height, data.train.width, 3});
    {
        auto& buf = batch.raw();
        Rng rng(99);
        for (double& v : buf) v = rng.uniform(0.0, 1.0);
    }
    Tape ta(false), tb(false);
    ForwardResult want = model.net->forward(ta, batch);
    ForwardResult got = restored.forward(tb, batch);
    CHECK(want.logits_a.data() == got.logits_a.data());
    CHECK(want.logits_b.data() == got.logits_b.data());

    // A mismatched architecture must reject the file.
    nc.reduction = 4;
    SharingNetwork wrong = SharingNetwork::build(nc, derive_seed(cfg.seed, 1));
    CHECK_THROWS_AS(load_checkpoint(path.string(), wrong.params()), DataError);
    std::filesystem::remove(path);
}

TEST_CASE("train rejects inconsistent splits") {
    SplitResult data = tiny_splits(24);
    TrainConfig cfg = tiny_config(SharingKind::None, 2);

    SplitResult empty = data;
    empty.val.samples.clear();
    CHECK_THROWS_AS(train(cfg, empty), ConfigError);

    SplitResult mismatched = data;
    mismatched.test.attributes.pop_back();
    for (auto& s : mismatched.test.samples) s.labels.pop_back();
    CHECK_THROWS_AS(train(cfg, mismatched), ConfigError);
}
