#pragma once

#include <string>
#include <vector>

#include "casnet/train.hpp"

namespace casnet {

enum class SuiteKind { Baselines, Ablations, Grouping, Reduction, Integration };

const char* suite_kind_name(SuiteKind kind);
SuiteKind suite_kind_from(const std::string& name);

/// The variant list a suite expands to, as (name, config) built from `base`:
///   baselines    hard / vanilla / cross_stitch / sluice / cas
///   ablations    full co-attentive module plus its six reduced variants
///   grouping     the four attribute grouping schemes
///   reduction    r in {2, 4, 8, 16, 32}
///   integration  the ten consecutive insertion masks (4 singles, 3 pairs,
///                2 triples, all 4 stages)
std::vector<std::pair<std::string, TrainConfig>> suite_variants(SuiteKind kind,
                                                                const TrainConfig& base);

struct SuiteRun {
    std::string variant;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;  // set when !ok
    RunRecord record;   // valid when ok
};

struct SuiteRow {
    std::string variant;
    int runs_ok = 0;
    // metric order: mA, accuracy, precision, recall, f1
    double mean[5] = {0, 0, 0, 0, 0};
    double stddev[5] = {0, 0, 0, 0, 0};  // sample stddev; 0 for a single run
};

struct SuiteResult {
    SuiteKind kind = SuiteKind::Baselines;
    std::vector<SuiteRun> runs;
    std::vector<SuiteRow> rows;

    /// CSV in the metric-report schema: one mean row per variant (run id =
    /// variant name) followed by one "<variant>_std" row each.
    std::string table() const;
};

/// Trains every variant x seed combination in order. A run that throws is
/// recorded as failed and the suite continues; its variant's statistics are
/// computed over the surviving runs.
SuiteResult run_suite(SuiteKind kind, const TrainConfig& base,
                      const std::vector<std::uint64_t>& seeds, const SplitResult& data);

}  // namespace casnet
