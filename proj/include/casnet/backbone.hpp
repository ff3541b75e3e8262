#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "casnet/sharing.hpp"

namespace casnet {

/// None = two independent streams; Hard = one shared stream with a combined
/// head (HardShareNet); the rest pick the module inserted between stages.
enum class SharingKind { None, Hard, CAS, CrossStitch, Sluice };

std::string sharing_kind_name(SharingKind k);
SharingKind sharing_kind_from(const std::string& name);

/// One downsampling stage: `blocks` conv3x3+ReLU pairs, the first conv
/// carrying the stride and the channel change.
struct StageSpec {
    int out_channels = 0;
    int stride = 2;
    int blocks = 1;
};

struct ConvLayer {
    Param k;
    Param b;
};

struct Stage {
    std::vector<ConvLayer> convs;
    int stride = 1;
};

struct Stream {
    std::vector<Stage> stages;
};

struct SharingNetConfig {
    std::vector<StageSpec> stages = {{8, 2, 1}, {16, 2, 1}, {32, 2, 1}, {64, 2, 1}};
    std::vector<bool> insertion_mask = {true, true, true, true};
    SharingKind sharing = SharingKind::CAS;
    AblationConfig ablation;
    int reduction = 16;
    int in_channels = 3;
    int labels_a = 0;
    int labels_b = 0;
};

struct ForwardResult {
    Tensor logits_a;  // (N,1,1,L_A)
    Tensor logits_b;  // (N,1,1,L_B)
    /// One (M_A, M_B) pair per co-attentive insertion, in stage order.
    std::vector<std::pair<Tensor, Tensor>> maps;
};

/// Recenters [0,1] pixels around zero and rescales them for the stem. Both
/// network kinds apply this inside forward(); exposed so callers that replay
/// the stream op-by-op can reproduce the exact same tape sequence.
Tensor condition_input(Tape& tape, const Tensor& images);

/// Two parallel streams with optional sharing modules between stages and one
/// linear head per task.
class SharingNetwork {
public:
    SharingNetConfig cfg;
    Stream stream_a;
    Stream stream_b;
    std::vector<std::optional<CasParams>> cas;           // indexed by stage
    std::vector<std::optional<CrossStitchParams>> stitch;
    std::vector<std::optional<SluiceParams>> sluice;
    std::optional<Param> head_a_w, head_a_b, head_b_w, head_b_b;

    static SharingNetwork build(const SharingNetConfig& cfg, std::uint64_t seed);

    ForwardResult forward(Tape& tape, const Tensor& images);

    /// All parameters in a fixed, deterministic order.
    std::vector<Param*> params();
    std::vector<Param*> stream_a_params();
    std::vector<Param*> stream_b_params();
    std::int64_t num_params();
};

/// Single stream predicting both tasks' attributes from one head.
class HardShareNet {
public:
    std::vector<StageSpec> specs;
    int in_channels = 3;
    int labels = 0;
    Stream stream;
    std::optional<Param> head_w, head_b;

    static HardShareNet build(const std::vector<StageSpec>& stages, int in_channels,
                              int labels_total, std::uint64_t seed);

    Tensor forward(Tape& tape, const Tensor& images);
    std::vector<Param*> params();
    std::int64_t num_params();
};

}  // namespace casnet
