#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "casnet/backbone.hpp"
#include "casnet/data.hpp"
#include "casnet/metrics.hpp"

namespace casnet {

struct TrainConfig {
    int epochs = 70;
    double lr = 0.02;
    int lr_decay_epoch = 40;
    double lr_after = 0.002;
    double momentum = 0.9;
    double weight_decay = 0.0;
    int batch_size = 32;
    int r = 16;
    std::uint64_t seed = 0;
    SharingKind sharing = SharingKind::CAS;
    std::vector<bool> insertion_mask = {true, true, true, true};
    AblationConfig ablation;
    GroupingKind grouping = GroupingKind::GlobalLocal;

    void validate() const;
};

/// Step function: lr before lr_decay_epoch, lr_after from that epoch on.
double lr_schedule(const TrainConfig& cfg, int epoch);

struct EpochLog {
    double loss_a = 0.0;  // mean training bce of the task-A head
    double loss_b = 0.0;  // task-B head; for Hard-Sharing these are the two
                          // slices of the single combined loss
    MetricReport val;
};

struct RunRecord {
    TrainConfig config;
    GroupingScheme grouping;
    std::vector<EpochLog> epochs;
    int best_epoch = -1;   // epoch whose parameters were used on the test set
    MetricReport test;
    double wall_seconds = 0.0;  // informational; not part of the determinism contract
};

/// Holds whichever network class the config selected. After train() returns
/// it carries the best-validation parameters (the ones test metrics used).
struct TrainedModel {
    std::optional<SharingNetwork> net;
    std::optional<HardShareNet> hard;

    bool is_hard() const { return hard.has_value(); }
    std::vector<Param*> params();
    /// Task logits; the hard model's single head is split by channel range.
    std::pair<Tensor, Tensor> forward(Tape& tape, const Tensor& images, int labels_a);
};

/// SGD with momentum over shuffled mini-batches, bce(headA) + bce(headB)
/// (single bce for Hard-Sharing), best-validation-instance-F1 snapshot
/// evaluated on the test split. Deterministic given (config, seed).
/// Throws NumericError with epoch/batch diagnostics if the loss goes
/// non-finite. When out_model is given, the trained network is moved into it.
RunRecord train(const TrainConfig& cfg, const SplitResult& data,
                TrainedModel* out_model = nullptr);

}  // namespace casnet
