#include "casnet/suite.hpp"

#include <cmath>
#include <cstdio>

namespace casnet {

const char* suite_kind_name(SuiteKind kind) {
    switch (kind) {
        case SuiteKind::Baselines: return "baselines";
        case SuiteKind::Ablations: return "ablations";
        case SuiteKind::Grouping: return "grouping";
        case SuiteKind::Reduction: return "reduction";
        case SuiteKind::Integration: return "integration";
    }
    return "?";
}

SuiteKind suite_kind_from(const std::string& name) {
    if (name == "baselines") return SuiteKind::Baselines;
    if (name == "ablations") return SuiteKind::Ablations;
    if (name == "grouping") return SuiteKind::Grouping;
    if (name == "reduction") return SuiteKind::Reduction;
    if (name == "integration") return SuiteKind::Integration;
    throw ConfigError("unknown suite: " + name);
}

std::vector<std::pair<std::string, TrainConfig>> suite_variants(SuiteKind kind,
                                                                const TrainConfig& base) {
    std::vector<std::pair<std::string, TrainConfig>> out;
    auto add = [&](const std::string& name, auto&& tweak) {
        TrainConfig cfg = base;
        tweak(cfg);
        out.emplace_back(name, std::move(cfg));
    };
    switch (kind) {
        case SuiteKind::Baselines:
            for (SharingKind k : {SharingKind::Hard, SharingKind::None, SharingKind::CrossStitch,
                                  SharingKind::Sluice, SharingKind::CAS}) {
                const std::string name = k == SharingKind::None ? "vanilla" : sharing_kind_name(k);
                add(name, [k](TrainConfig& c) { c.sharing = k; });
            }
            break;
        case SuiteKind::Ablations: {
            std::vector<AblationConfig> abs(7);
            abs[1].synergetic_minus = true;
            abs[2].synergetic_minus2 = true;
            abs[3].attentive_minus = true;
            abs[4].attentive_minus2 = true;
            abs[5].ts_minus2 = true;
            abs[6].channel_minus2 = true;
            for (const AblationConfig& ab : abs)
                add(ab.tag(), [&ab](TrainConfig& c) {
                    c.sharing = SharingKind::CAS;
                    c.ablation = ab;
                });
            break;
        }
        case SuiteKind::Grouping:
            for (GroupingKind g : {GroupingKind::GlobalLocal, GroupingKind::RareFrequent,
                                   GroupingKind::TopDown, GroupingKind::Random})
                add(grouping_kind_name(g), [g](TrainConfig& c) { c.grouping = g; });
            break;
        case SuiteKind::Reduction:
            for (int r : {2, 4, 8, 16, 32})
                add("r" + std::to_string(r), [r](TrainConfig& c) {
                    c.sharing = SharingKind::CAS;
                    c.r = r;
                });
            break;
        case SuiteKind::Integration:
            for (int first = 0; first < 4; ++first)
                for (int last = first; last < 4; ++last) {
                    std::string name = "stage" + std::to_string(first + 1);
                    if (last != first) name += "-" + std::to_string(last + 1);
                    add(name, [first, last](TrainConfig& c) {
                        c.sharing = SharingKind::CAS;
                        c.insertion_mask = {false, false, false, false};
                        for (int i = first; i <= last; ++i) c.insertion_mask[i] = true;
                    });
                }
            break;
    }
    return out;
}

std::string SuiteResult::table() const {
    std::string t = MetricReport::csv_header() + "\n";
    char buf[200];
    auto row = [&](const std::string& id, const double* v) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", id.c_str(), v[0], v[1],
                      v[2], v[3], v[4]);
        t += buf;
    };
    for (const SuiteRow& r : rows) row(r.variant, r.mean);
    for (const SuiteRow& r : rows) row(r.variant + "_std", r.stddev);
    return t;
}

SuiteResult run_suite(SuiteKind kind, const TrainConfig& base,
                      const std::vector<std::uint64_t>& seeds, const SplitResult& data) {
    if (seeds.empty()) throw ConfigError("run_suite: seed list is empty");
    SuiteResult res;
    res.kind = kind;
    for (const auto& [name, cfg] : suite_variants(kind, base)) {
        SuiteRow row;
        row.variant = name;
        double sum[5] = {0, 0, 0, 0, 0}, sumsq[5] = {0, 0, 0, 0, 0};
        for (std::uint64_t seed : seeds) {
            SuiteRun run;
            run.variant = name;
            run.seed = seed;
            TrainConfig c = cfg;
            c.seed = seed;
            try {
                run.record = train(c, data);
                run.ok = true;
            } catch (const std::exception& e) {
                run.error = e.what();
                std::fprintf(stderr, "suite %s: variant %s seed %llu failed: %s\n",
                             suite_kind_name(kind), name.c_str(),
                             static_cast<unsigned long long>(seed), e.what());
            }
            if (run.ok) {
                const MetricReport& t = run.record.test;
                const double v[5] = {t.mA, t.instance_accuracy, t.instance_precision,
                                     t.instance_recall, t.instance_f1};
                for (int i = 0; i < 5; ++i) {
                    sum[i] += v[i];
                    sumsq[i] += v[i] * v[i];
                }
                ++row.runs_ok;
            }
            res.runs.push_back(std::move(run));
        }
        const int n = row.runs_ok;
        for (int i = 0; i < 5; ++i) {
            row.mean[i] = n > 0 ? sum[i] / n : std::nan("");
            row.stddev[i] =
                n > 1 ? std::sqrt(std::max(0.0, (sumsq[i] - sum[i] * sum[i] / n) / (n - 1)))
                      : 0.0;
        }
        res.rows.push_back(std::move(row));
    }
    return res;
}

}  // namespace casnet
