#include "casnet/sharing.hpp"

#include <cmath>

namespace casnet {

void AblationConfig::validate() const {
    if (synergetic_minus && synergetic_minus2) {
        throw ConfigError("ablation: synergetic_minus and synergetic_minus2 are exclusive");
    }
    if (attentive_minus && attentive_minus2) {
        throw ConfigError("ablation: attentive_minus and attentive_minus2 are exclusive");
    }
    if (channel_minus2 && (attentive_minus || attentive_minus2)) {
        throw ConfigError(
            "ablation: channel_minus2 already fixes the attention to the broadcast map; "
            "combining it with an attentive flag is contradictory");
    }
}

std::string AblationConfig::tag() const {
    std::string s;
    auto put = [&s](const char* t) {
        if (!s.empty()) s += '+';
        s += t;
    };
    if (synergetic_minus) put("syn-");
    if (synergetic_minus2) put("syn--");
    if (attentive_minus) put("att-");
    if (attentive_minus2) put("att--");
    if (ts_minus2) put("ts--");
    if (channel_minus2) put("ch--");
    return s.empty() ? "full" : s;
}

namespace {

Param fc_weight(const std::string& name, int cout, int cin, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(cin));
    return Param(name, Tensor::uniform({1, 1, cout, cin}, -s, s, rng));
}

Param conv_weight(const std::string& name, int kh, int kw, int cin, int cout, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(kh) * kw * cin);
    return Param(name, Tensor::uniform({kh, kw, cin, cout}, -s, s, rng));
}

Param zero_bias(const std::string& name, int c) { return Param(name, Tensor({1, 1, 1, c})); }

CasTaskParams init_task(const std::string& prefix, int c, int cr, const AblationConfig& ab,
                        Rng& rng) {
    CasTaskParams t;
    if (!ab.channel_minus2) {
        t.w_m = fc_weight(prefix + ".w_m", cr, c, rng);
        t.b_m = zero_bias(prefix + ".b_m", cr);
        t.w_sh = fc_weight(prefix + ".w_sh", c, cr, rng);
        t.b_sh = zero_bias(prefix + ".b_sh", c);
        if (!ab.attentive_minus && !ab.attentive_minus2) {
            t.w_a = fc_weight(prefix + ".w_a", c, cr, rng);
            t.b_a = zero_bias(prefix + ".b_a", c);
        }
        if (!ab.ts_minus2) {
            t.w_t = fc_weight(prefix + ".w_t", c, cr, rng);
            t.b_t = zero_bias(prefix + ".b_t", c);
        }
    }
    if (!ab.synergetic_minus2) {
        const int cin = ab.synergetic_minus ? c : 2 * c;
        t.k_syn = conv_weight(prefix + ".k_syn", 1, 1, cin, c, rng);
        t.b_syn = zero_bias(prefix + ".b_syn", c);
    }
    t.k_map = conv_weight(prefix + ".k_map", 7, 7, 2, 1, rng);
    t.b_map = zero_bias(prefix + ".b_map", 1);
    return t;
}

void collect(CasTaskParams& t, std::vector<Param*>& out) {
    for (auto* o : {&t.w_m, &t.b_m, &t.w_sh, &t.b_sh, &t.w_a, &t.b_a, &t.w_t, &t.b_t, &t.k_syn,
                    &t.b_syn, &t.k_map, &t.b_map}) {
        if (o->has_value()) out.push_back(&o->value());
    }
}

Param& need(std::optional<Param>& o, const std::string& what) {
    if (!o) throw ConfigError("cas_forward: parameter '" + what + "' missing for this ablation");
    return *o;
}

}  // namespace

CasParams CasParams::init(const std::string& prefix, int channels, int reduction,
                          const AblationConfig& ab, Rng& rng) {
    ab.validate();
    if (channels < 1) throw ConfigError("cas init: channels must be >= 1");
    if (reduction < 1) throw ConfigError("cas init: reduction ratio must be >= 1");
    CasParams p;
    p.channels = channels;
    p.reduction = reduction;
    p.reduced = std::max(channels / reduction, 1);
    p.ablation = ab;
    p.task_a = init_task(prefix + ".A", channels, p.reduced, ab, rng);
    p.task_b = init_task(prefix + ".B", channels, p.reduced, ab, rng);
    return p;
}

std::vector<Param*> CasParams::params() {
    std::vector<Param*> out;
    collect(task_a, out);
    collect(task_b, out);
    return out;
}

CasOutput cas_forward(Tape& tape, const Tensor& feat_a, const Tensor& feat_b, CasParams& p,
                      const AblationConfig& ab) {
    ab.validate();
    if (!(p.ablation == ab)) {
        throw ConfigError("cas_forward: parameters were initialized for variant '" +
                          p.ablation.tag() + "', called with '" + ab.tag() + "'");
    }
    if (!(feat_a.shape() == feat_b.shape())) {
        throw ShapeError("cas_forward: task features differ, " + feat_a.shape().str() + " vs " +
                         feat_b.shape().str());
    }
    if (feat_a.shape().c != p.channels) {
        throw ShapeError("cas_forward: parameters built for " + std::to_string(p.channels) +
                         " channels, input has " + std::to_string(feat_a.shape().c));
    }

    const Tensor* feats[2] = {&feat_a, &feat_b};
    CasTaskParams* tasks[2] = {&p.task_a, &p.task_b};
    const char* tn[2] = {"A", "B"};

    // channel interaction: squeeze each task's feature, gate it for sharing
    Tensor v_m[2];
    Tensor feat_sh[2];
    for (int t = 0; t < 2; ++t) {
        if (ab.channel_minus2) {
            feat_sh[t] = *feats[t];
        } else {
            CasTaskParams& tp = *tasks[t];
            v_m[t] = tape.relu(tape.linear(tape.gap(*feats[t]),
                                           need(tp.w_m, std::string(tn[t]) + ".w_m"),
                                           need(tp.b_m, std::string(tn[t]) + ".b_m")));
            Tensor v_sh = tape.sigmoid(tape.linear(v_m[t],
                                                   need(tp.w_sh, std::string(tn[t]) + ".w_sh"),
                                                   need(tp.b_sh, std::string(tn[t]) + ".b_sh")));
            feat_sh[t] = tape.broadcast_mul(*feats[t], v_sh);
        }
    }

    // synergetic branch: fuse the gated pair, then per-task 1x1 conv and 7x7 map
    Tensor feat_cat = (ab.synergetic_minus || ab.synergetic_minus2)
                          ? tape.add(feat_sh[0], feat_sh[1])
                          : tape.concat_channels(feat_sh[0], feat_sh[1]);
    auto [cat_avg, cat_max] = tape.channel_stats(feat_cat);
    Tensor stats = tape.concat_channels(cat_avg, cat_max);

    CasOutput out;
    Tensor* outs[2] = {&out.feat_a, &out.feat_b};
    Tensor* maps[2] = {&out.map_a, &out.map_b};

    for (int t = 0; t < 2; ++t) {
        CasTaskParams& tp = *tasks[t];
        Tensor feat_syn =
            ab.synergetic_minus2
                ? feat_cat
                : tape.conv2d(feat_cat, need(tp.k_syn, std::string(tn[t]) + ".k_syn"),
                              need(tp.b_syn, std::string(tn[t]) + ".b_syn"));
        Tensor m = tape.sigmoid(tape.conv2d(stats, need(tp.k_map, std::string(tn[t]) + ".k_map"),
                                            need(tp.b_map, std::string(tn[t]) + ".b_map")));
        *maps[t] = m;

        // global attention: channel gate times spatial map, unless ablated away
        Tensor attention;
        bool has_attention = !ab.attentive_minus2;
        if (has_attention) {
            if (ab.attentive_minus || ab.channel_minus2) {
                attention = m;
            } else {
                Tensor v_a = tape.sigmoid(tape.linear(v_m[t],
                                                      need(tp.w_a, std::string(tn[t]) + ".w_a"),
                                                      need(tp.b_a, std::string(tn[t]) + ".b_a")));
                attention = tape.broadcast_mul(v_a, m);
            }
        }

        Tensor combined = tape.add(*feats[t], feat_syn);
        if (!ab.ts_minus2) {
            Tensor feat_t;
            if (ab.channel_minus2) {
                feat_t = *feats[t];
            } else {
                Tensor v_t = tape.sigmoid(tape.linear(v_m[t],
                                                      need(tp.w_t, std::string(tn[t]) + ".w_t"),
                                                      need(tp.b_t, std::string(tn[t]) + ".b_t")));
                feat_t = tape.broadcast_mul(*feats[t], v_t);
            }
            combined = tape.add(combined, feat_t);
        }

        *outs[t] = has_attention ? tape.broadcast_mul(combined, attention) : combined;
    }
    return out;
}

CrossStitchParams CrossStitchParams::init(const std::string& prefix, int channels) {
    if (channels < 1) throw ConfigError("cross-stitch init: channels must be >= 1");
    return CrossStitchParams{
        Param(prefix + ".aa", Tensor::full({1, 1, 1, channels}, 0.9)),
        Param(prefix + ".ab", Tensor::full({1, 1, 1, channels}, 0.1)),
        Param(prefix + ".ba", Tensor::full({1, 1, 1, channels}, 0.1)),
        Param(prefix + ".bb", Tensor::full({1, 1, 1, channels}, 0.9)),
    };
}

std::vector<Param*> CrossStitchParams::params() { return {&aa, &ab, &ba, &bb}; }

std::pair<Tensor, Tensor> cross_stitch_forward(Tape& tape, const Tensor& feat_a,
                                               const Tensor& feat_b, CrossStitchParams& p) {
    if (!(feat_a.shape() == feat_b.shape())) {
        throw ShapeError("cross_stitch_forward: task features differ, " + feat_a.shape().str() +
                         " vs " + feat_b.shape().str());
    }
    if (feat_a.shape().c != p.aa.value.shape().c) {
        throw ShapeError("cross_stitch_forward: parameters built for " +
                         std::to_string(p.aa.value.shape().c) + " channels, input has " +
                         std::to_string(feat_a.shape().c));
    }
    const int n = feat_a.shape().n;
    auto mix = [&](Param& w, const Tensor& x) {
        return tape.broadcast_mul(x, tape.repeat_batch(tape.use(w), n));
    };
    Tensor a2 = tape.add(mix(p.aa, feat_a), mix(p.ab, feat_b));
    Tensor b2 = tape.add(mix(p.ba, feat_a), mix(p.bb, feat_b));
    return {a2, b2};
}

SluiceParams SluiceParams::init(const std::string& prefix) {
    std::vector<double> beta(16, 0.1 / 3.0);
    for (int i = 0; i < 4; ++i) beta[static_cast<std::size_t>(i) * 4 + i] = 0.9;
    return SluiceParams{Param(prefix + ".beta", Tensor(Shape{1, 1, 1, 16}, std::move(beta)))};
}

std::vector<Param*> SluiceParams::params() { return {&beta}; }

std::pair<Tensor, Tensor> sluice_forward(Tape& tape, const Tensor& feat_a, const Tensor& feat_b,
                                         SluiceParams& p) {
    if (!(feat_a.shape() == feat_b.shape())) {
        throw ShapeError("sluice_forward: task features differ, " + feat_a.shape().str() + " vs " +
                         feat_b.shape().str());
    }
    const Shape s = feat_a.shape();
    if (s.c % 2 != 0) {
        throw ConfigError("sluice_forward: channel count must be even, got " +
                          std::to_string(s.c));
    }
    const int half = s.c / 2;
    Tensor b_used = tape.use(p.beta);
    Tensor sub[4] = {
        tape.slice_channels(feat_a, 0, half),
        tape.slice_channels(feat_a, half, s.c),
        tape.slice_channels(feat_b, 0, half),
        tape.slice_channels(feat_b, half, s.c),
    };
    Tensor mixed[4];
    for (int i = 0; i < 4; ++i) {
        Tensor acc;
        for (int j = 0; j < 4; ++j) {
            Tensor coef = tape.repeat_batch(tape.slice_channels(b_used, i * 4 + j, i * 4 + j + 1),
                                            s.n);
            Tensor term = tape.broadcast_mul(sub[j], coef);
            acc = (j == 0) ? term : tape.add(acc, term);
        }
        mixed[i] = acc;
    }
    return {tape.concat_channels(mixed[0], mixed[1]), tape.concat_channels(mixed[2], mixed[3])};
}

}  // namespace casnet
