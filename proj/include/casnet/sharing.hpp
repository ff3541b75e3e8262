#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "casnet/rng.hpp"
#include "casnet/tape.hpp"

namespace casnet {

/// Reduced-variant switches for the co-attentive module. Default is the full
/// module. "minus" weakens a branch, "minus2" removes it.
struct AblationConfig {
    bool synergetic_minus = false;   // sum instead of concat; 1x1 conv maps C->C
    bool synergetic_minus2 = false;  // sum, and no 1x1 conv at all
    bool attentive_minus = false;    // A = M broadcast over channels (no V_a)
    bool attentive_minus2 = false;   // no attention multiply at all
    bool ts_minus2 = false;          // no task-specific branch
    bool channel_minus2 = false;     // no channel gates: feat_sh = feat, feat_t = feat, A = M

    bool operator==(const AblationConfig&) const = default;

    /// Throws ConfigError on contradictory combinations.
    void validate() const;

    /// Short label, e.g. "full", "syn-", "att--", or a +-joined combination.
    std::string tag() const;
};

/// Parameters of one task's half of a co-attentive module. Entries are
/// present only when the ablation configuration uses them; conv_map is always
/// present because the spatial map M is always produced.
struct CasTaskParams {
    std::optional<Param> w_m, b_m;      // C -> C/r squeeze
    std::optional<Param> w_sh, b_sh;    // C/r -> C sharing gate
    std::optional<Param> w_a, b_a;      // C/r -> C attention gate
    std::optional<Param> w_t, b_t;      // C/r -> C task-specific gate
    std::optional<Param> k_syn, b_syn;  // 1x1 conv on the combined feature
    std::optional<Param> k_map, b_map;  // 7x7 conv producing M
};

struct CasParams {
    int channels = 0;
    int reduced = 0;
    int reduction = 1;
    AblationConfig ablation;
    CasTaskParams task_a;
    CasTaskParams task_b;

    /// Builds the parameter set for `ab` at the given width. Weights are
    /// uniform in ±1/sqrt(fan_in), biases zero. reduced = max(C/r, 1).
    static CasParams init(const std::string& prefix, int channels, int reduction,
                          const AblationConfig& ab, Rng& rng);

    /// All live parameters, deterministic order (task A first).
    std::vector<Param*> params();
};

struct CasOutput {
    Tensor feat_a;
    Tensor feat_b;
    Tensor map_a;  // (N,H,W,1) spatial attention, for visualization
    Tensor map_b;
};

/// The co-attentive sharing step: channel gating of each task's feature,
/// fusion of the gated pair, per-task synergetic feature and spatial map,
/// global attention, task-specific gating, then (feat + feat_syn + feat_t) * A.
/// `ab` must match the variant `p` was initialized for.
CasOutput cas_forward(Tape& tape, const Tensor& feat_a, const Tensor& feat_b, CasParams& p,
                      const AblationConfig& ab);

/// Per-channel 2x2 mixing of two task features.
struct CrossStitchParams {
    Param aa, ab, ba, bb;  // each (1,1,1,C)

    static CrossStitchParams init(const std::string& prefix, int channels);
    std::vector<Param*> params();
};

std::pair<Tensor, Tensor> cross_stitch_forward(Tape& tape, const Tensor& feat_a,
                                               const Tensor& feat_b, CrossStitchParams& p);

/// Each task's channels split into two half-width subspaces; one shared 4x4
/// matrix mixes the four subspaces.
struct SluiceParams {
    Param beta;  // (1,1,1,16), row-major 4x4

    static SluiceParams init(const std::string& prefix);
    std::vector<Param*> params();
};

std::pair<Tensor, Tensor> sluice_forward(Tape& tape, const Tensor& feat_a, const Tensor& feat_b,
                                         SluiceParams& p);

}  // namespace casnet
