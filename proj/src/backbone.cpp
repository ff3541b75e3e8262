#include "casnet/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace casnet {

std::string sharing_kind_name(SharingKind k) {
    switch (k) {
        case SharingKind::None: return "none";
        case SharingKind::Hard: return "hard";
        case SharingKind::CAS: return "cas";
        case SharingKind::CrossStitch: return "cross_stitch";
        case SharingKind::Sluice: return "sluice";
    }
    throw ConfigError("unknown sharing kind");
}

SharingKind sharing_kind_from(const std::string& name) {
    if (name == "none") return SharingKind::None;
    if (name == "hard") return SharingKind::Hard;
    if (name == "cas") return SharingKind::CAS;
    if (name == "cross_stitch") return SharingKind::CrossStitch;
    if (name == "sluice") return SharingKind::Sluice;
    throw ConfigError("unknown sharing kind '" + name + "'");
}

namespace {

void validate_stages(const std::vector<StageSpec>& stages) {
    if (stages.empty() || stages.size() > 4) {
        throw ConfigError("network needs 1 to 4 stages, got " + std::to_string(stages.size()));
    }
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const StageSpec& s = stages[i];
        if (s.out_channels < 1)
            throw ConfigError("stage " + std::to_string(i + 1) + ": out_channels must be >= 1");
        if (s.stride != 1 && s.stride != 2)
            throw ConfigError("stage " + std::to_string(i + 1) + ": stride must be 1 or 2");
        if (s.blocks < 1)
            throw ConfigError("stage " + std::to_string(i + 1) + ": blocks must be >= 1");
    }
}

Stream build_stream(const std::string& prefix, const std::vector<StageSpec>& specs,
                    int in_channels, Rng& rng) {
    Stream st;
    int cin = in_channels;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const StageSpec& sp = specs[i];
        Stage stage;
        stage.stride = sp.stride;
        for (int blk = 0; blk < sp.blocks; ++blk) {
            const int ci = (blk == 0) ? cin : sp.out_channels;
            const std::string name =
                prefix + ".stage" + std::to_string(i + 1) + ".conv" + std::to_string(blk + 1);
            const double s = 1.0 / std::sqrt(9.0 * ci);
            stage.convs.push_back(
                ConvLayer{Param(name + ".k", Tensor::uniform({3, 3, ci, sp.out_channels}, -s, s, rng)),
                          Param(name + ".b", Tensor({1, 1, 1, sp.out_channels}))});
        }
        st.stages.push_back(std::move(stage));
        cin = sp.out_channels;
    }
    return st;
}

Param head_weight(const std::string& name, int labels, int channels, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(channels));
    return Param(name, Tensor::uniform({1, 1, labels, channels}, -s, s, rng));
}

Tensor run_stream(Tape& tape, Stream& st, std::size_t stage_idx, const Tensor& x) {
    Tensor h = x;
    Stage& stage = st.stages[stage_idx];
    for (std::size_t blk = 0; blk < stage.convs.size(); ++blk) {
        const int stride = (blk == 0) ? stage.stride : 1;
        h = tape.relu(tape.conv2d(h, stage.convs[blk].k, stage.convs[blk].b, stride, 1));
    }
    return h;
}

// Raw pixels sit in [0,1] with a dominant DC term, while the conv weights
// start deliberately small (uniform 1/sqrt(fan-in), zero biases). Without
// recentering and a gain the pre-head activations begin so close to zero
// that the heads fit label base rates long before any feature emerges.
constexpr double kInputCenter = 0.5;
constexpr double kInputGain = 64.0;

void check_input(const Tensor& images, const std::vector<StageSpec>& specs, int in_channels) {
    const Shape s = images.shape();
    if (s.c != in_channels) {
        throw ShapeError("forward: expected " + std::to_string(in_channels) +
                         " input channels, got " + s.str());
    }
    int prod = 1;
    for (const auto& sp : specs) prod *= sp.stride;
    if (s.h % prod != 0 || s.w % prod != 0) {
        throw ShapeError("forward: spatial size " + s.str() +
                         " is not divisible by the stride product " + std::to_string(prod));
    }
}

void collect_stream(Stream& st, std::vector<Param*>& out) {
    for (auto& stage : st.stages)
        for (auto& conv : stage.convs) {
            out.push_back(&conv.k);
            out.push_back(&conv.b);
        }
}

}  // namespace

Tensor condition_input(Tape& tape, const Tensor& images) {
    const int n = images.shape().n;
    Tensor center = tape.repeat_batch(Tensor::full({1, 1, 1, 1}, -kInputCenter), n);
    Tensor gain = tape.repeat_batch(Tensor::full({1, 1, 1, 1}, kInputGain), n);
    return tape.broadcast_mul(tape.add(images, center), gain);
}

SharingNetwork SharingNetwork::build(const SharingNetConfig& cfg, std::uint64_t seed) {
    validate_stages(cfg.stages);
    if (cfg.insertion_mask.size() != cfg.stages.size()) {
        throw ConfigError("insertion_mask size " + std::to_string(cfg.insertion_mask.size()) +
                          " does not match stage count " + std::to_string(cfg.stages.size()));
    }
    if (cfg.labels_a < 1 || cfg.labels_b < 1) {
        throw ConfigError("both tasks need at least one attribute");
    }
    if (cfg.in_channels < 1) throw ConfigError("in_channels must be >= 1");
    const bool any_insert =
        std::any_of(cfg.insertion_mask.begin(), cfg.insertion_mask.end(), [](bool b) { return b; });
    if (cfg.sharing == SharingKind::None && any_insert) {
        throw ConfigError("insertion requested but sharing kind is 'none'");
    }
    if (cfg.sharing == SharingKind::Hard) {
        throw ConfigError("hard sharing is a single-stream model, use HardShareNet");
    }
    cfg.ablation.validate();

    SharingNetwork net;
    net.cfg = cfg;
    Rng rng_a(derive_seed(seed, 1));
    Rng rng_b(derive_seed(seed, 2));
    Rng rng_m(derive_seed(seed, 3));
    Rng rng_h(derive_seed(seed, 4));

    net.stream_a = build_stream("A", cfg.stages, cfg.in_channels, rng_a);
    net.stream_b = build_stream("B", cfg.stages, cfg.in_channels, rng_b);

    net.cas.resize(cfg.stages.size());
    net.stitch.resize(cfg.stages.size());
    net.sluice.resize(cfg.stages.size());
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
        if (!cfg.insertion_mask[i]) continue;
        const int c = cfg.stages[i].out_channels;
        const std::string prefix = "share" + std::to_string(i + 1);
        switch (cfg.sharing) {
            case SharingKind::CAS:
                net.cas[i] = CasParams::init(prefix, c, cfg.reduction, cfg.ablation, rng_m);
                break;
            case SharingKind::CrossStitch:
                net.stitch[i] = CrossStitchParams::init(prefix, c);
                break;
            case SharingKind::Sluice:
                if (c % 2 != 0) {
                    throw ConfigError("stage " + std::to_string(i + 1) + " has odd width " +
                                      std::to_string(c) + "; sluice sharing needs even channels");
                }
                net.sluice[i] = SluiceParams::init(prefix);
                break;
            case SharingKind::None:
            case SharingKind::Hard: break;
        }
    }

    const int c4 = cfg.stages.back().out_channels;
    net.head_a_w = head_weight("headA.w", cfg.labels_a, c4, rng_h);
    net.head_a_b = Param("headA.b", Tensor({1, 1, 1, cfg.labels_a}));
    net.head_b_w = head_weight("headB.w", cfg.labels_b, c4, rng_h);
    net.head_b_b = Param("headB.b", Tensor({1, 1, 1, cfg.labels_b}));
    return net;
}

ForwardResult SharingNetwork::forward(Tape& tape, const Tensor& images) {
    check_input(images, cfg.stages, cfg.in_channels);
    ForwardResult res;
    Tensor conditioned = condition_input(tape, images);
    Tensor ha = conditioned;
    Tensor hb = conditioned;
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
        ha = run_stream(tape, stream_a, i, ha);
        hb = run_stream(tape, stream_b, i, hb);
        if (!cfg.insertion_mask[i]) continue;
        switch (cfg.sharing) {
            case SharingKind::CAS: {
                CasOutput out = cas_forward(tape, ha, hb, *cas[i], cfg.ablation);
                ha = out.feat_a;
                hb = out.feat_b;
                res.maps.emplace_back(out.map_a, out.map_b);
                break;
            }
            case SharingKind::CrossStitch: {
                auto [na, nb] = cross_stitch_forward(tape, ha, hb, *stitch[i]);
                ha = na;
                hb = nb;
                break;
            }
            case SharingKind::Sluice: {
                auto [na, nb] = sluice_forward(tape, ha, hb, *sluice[i]);
                ha = na;
                hb = nb;
                break;
            }
            case SharingKind::None:
            case SharingKind::Hard: break;
        }
    }
    res.logits_a = tape.linear(tape.gap(ha), *head_a_w, *head_a_b);
    res.logits_b = tape.linear(tape.gap(hb), *head_b_w, *head_b_b);
    return res;
}

std::vector<Param*> SharingNetwork::params() {
    std::vector<Param*> out;
    collect_stream(stream_a, out);
    collect_stream(stream_b, out);
    for (std::size_t i = 0; i < cas.size(); ++i) {
        if (cas[i]) {
            auto ps = cas[i]->params();
            out.insert(out.end(), ps.begin(), ps.end());
        }
        if (stitch[i]) {
            auto ps = stitch[i]->params();
            out.insert(out.end(), ps.begin(), ps.end());
        }
        if (sluice[i]) {
            auto ps = sluice[i]->params();
            out.insert(out.end(), ps.begin(), ps.end());
        }
    }
    out.push_back(&*head_a_w);
    out.push_back(&*head_a_b);
    out.push_back(&*head_b_w);
    out.push_back(&*head_b_b);
    return out;
}

std::vector<Param*> SharingNetwork::stream_a_params() {
    std::vector<Param*> out;
    collect_stream(stream_a, out);
    return out;
}

std::vector<Param*> SharingNetwork::stream_b_params() {
    std::vector<Param*> out;
    collect_stream(stream_b, out);
    return out;
}

std::int64_t SharingNetwork::num_params() {
    std::int64_t n = 0;
    for (Param* p : params()) n += p->numel();
    return n;
}

HardShareNet HardShareNet::build(const std::vector<StageSpec>& stages, int in_channels,
                                 int labels_total, std::uint64_t seed) {
    validate_stages(stages);
    if (labels_total < 1) throw ConfigError("hard-sharing head needs at least one attribute");
    if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
    HardShareNet net;
    net.specs = stages;
    net.in_channels = in_channels;
    net.labels = labels_total;
    Rng rng_s(derive_seed(seed, 1));
    Rng rng_h(derive_seed(seed, 4));
    net.stream = build_stream("S", stages, in_channels, rng_s);
    net.head_w = head_weight("head.w", labels_total, stages.back().out_channels, rng_h);
    net.head_b = Param("head.b", Tensor({1, 1, 1, labels_total}));
    return net;
}

Tensor HardShareNet::forward(Tape& tape, const Tensor& images) {
    check_input(images, specs, in_channels);
    Tensor h = condition_input(tape, images);
    for (std::size_t i = 0; i < specs.size(); ++i) h = run_stream(tape, stream, i, h);
    return tape.linear(tape.gap(h), *head_w, *head_b);
}

std::vector<Param*> HardShareNet::params() {
    std::vector<Param*> out;
    collect_stream(stream, out);
    out.push_back(&*head_w);
    out.push_back(&*head_b);
    return out;
}

std::int64_t HardShareNet::num_params() {
    std::int64_t n = 0;
    for (Param* p : params()) n += p->numel();
    return n;
}

}  // namespace casnet
