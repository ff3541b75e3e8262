#include <cmath>
#include <vector>

#include "casnet/metrics.hpp"
#include "casnet/rng.hpp"
#include "doctest.h"

using namespace casnet;

namespace {

// Straight-from-the-definitions reference, organized around index sets rather
// than running counters so it shares no structure with the library version.
struct RefResult {
    double mA, acc, prec, rec, f1;
};

RefResult reference_eval(const std::vector<std::vector<double>>& scores,
                         const std::vector<std::vector<int>>& targets, double threshold) {
    const int n = static_cast<int>(scores.size());
    const int L = static_cast<int>(scores[0].size());
    std::vector<std::vector<int>> preds(n);
    for (int i = 0; i < n; ++i)
        for (int l = 0; l < L; ++l)
            if (scores[i][l] >= threshold) preds[i].push_back(l);
    std::vector<std::vector<int>> truths(n);
    for (int i = 0; i < n; ++i)
        for (int l = 0; l < L; ++l)
            if (targets[i][l]) truths[i].push_back(l);

    double ma = 0.0;
    int valid = 0;
    for (int l = 0; l < L; ++l) {
        int pos = 0, neg = 0, tp = 0, tn = 0;
        for (int i = 0; i < n; ++i) {
            const bool p = std::count(preds[i].begin(), preds[i].end(), l) > 0;
            if (targets[i][l]) {
                ++pos;
                tp += p;
            } else {
                ++neg;
                tn += !p;
            }
        }
        if (pos == 0 || neg == 0) continue;
        ma += 0.5 * (double(tp) / pos + double(tn) / neg);
        ++valid;
    }
    ma = valid ? ma / valid : 0.0;

    double acc = 0.0, prec = 0.0, rec = 0.0;
    for (int i = 0; i < n; ++i) {
        std::vector<int> inter;
        for (int l : truths[i])
            if (std::count(preds[i].begin(), preds[i].end(), l)) inter.push_back(l);
        std::vector<int> uni = truths[i];
        for (int l : preds[i])
            if (!std::count(uni.begin(), uni.end(), l)) uni.push_back(l);
        acc += uni.empty() ? 1.0 : double(inter.size()) / uni.size();
        prec += preds[i].empty() ? (truths[i].empty() ? 1.0 : 0.0)
                                 : double(inter.size()) / preds[i].size();
        rec += truths[i].empty() ? 1.0 : double(inter.size()) / truths[i].size();
    }
    acc /= n, prec /= n, rec /= n;
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    return RefResult{ma, acc, prec, rec, f1};
}

Tensor to_scores(const std::vector<std::vector<double>>& rows) {
    const int n = static_cast<int>(rows.size());
    const int L = static_cast<int>(rows[0].size());
    Tensor t(Shape{n, 1, 1, L});
    auto& buf = t.raw();
    for (int i = 0; i < n; ++i)
        for (int l = 0; l < L; ++l) buf[static_cast<size_t>(t.offset(i, 0, 0, l))] = rows[i][l];
    return t;
}

std::vector<std::uint8_t> to_targets(const std::vector<std::vector<int>>& rows) {
    std::vector<std::uint8_t> out;
    for (const auto& r : rows)
        for (int v : r) out.push_back(static_cast<std::uint8_t>(v));
    return out;
}

}  // namespace

TEST_CASE("hand-worked two-sample example") {
    // targets {{1,0},{0,1}}, predictions {{1,1},{0,1}} at threshold 0.5
    const auto scores = to_scores({{0.9, 0.8}, {0.1, 0.7}});
    const auto targets = to_targets({{1, 0}, {0, 1}});
    const MetricReport r = evaluate(scores, targets, 0.5);
    CHECK(r.mA == 0.75);
    CHECK(r.instance_accuracy == 0.75);
    CHECK(r.instance_precision == 0.75);
    CHECK(r.instance_recall == 1.0);
    CHECK(r.instance_f1 == 6.0 / 7.0);
    CHECK(r.degenerate_attributes == 0);
    REQUIRE(r.per_attribute.size() == 2);
    CHECK(r.per_attribute[0].tp == 1);
    CHECK(r.per_attribute[0].tn == 1);
    CHECK(r.per_attribute[1].tp == 1);
    CHECK(r.per_attribute[1].fp == 1);
    for (const AttrCounts& c : r.per_attribute) CHECK(c.tp + c.fp + c.tn + c.fn == 2);
}

TEST_CASE("perfect predictions score one everywhere") {
    const auto scores = to_scores({{0.9, 0.1, 0.8}, {0.2, 0.7, 0.1}});
    const auto targets = to_targets({{1, 0, 1}, {0, 1, 0}});
    const MetricReport r = evaluate(scores, targets);
    CHECK(r.mA == 1.0);
    CHECK(r.instance_accuracy == 1.0);
    CHECK(r.instance_precision == 1.0);
    CHECK(r.instance_recall == 1.0);
    CHECK(r.instance_f1 == 1.0);
}

TEST_CASE("degenerate attributes are excluded from mA") {
    // Column 0 is all-positive, column 1 all-negative; only column 2 counts.
    const auto scores = to_scores({{0.9, 0.1, 0.9}, {0.9, 0.1, 0.1}});
    const auto targets = to_targets({{1, 0, 1}, {1, 0, 0}});
    const MetricReport r = evaluate(scores, targets);
    CHECK(r.degenerate_attributes == 2);
    CHECK(r.mA == 1.0);  // column 2 is predicted perfectly

    // Every column degenerate: mA falls back to 0.
    const auto all_pos = to_targets({{1, 1}, {1, 1}});
    const MetricReport r2 = evaluate(to_scores({{0.9, 0.1}, {0.9, 0.1}}), all_pos);
    CHECK(r2.degenerate_attributes == 2);
    CHECK(r2.mA == 0.0);
}

TEST_CASE("all-negative predictions zero the recall of positive samples") {
    const auto scores = to_scores({{0.1, 0.2}, {0.3, 0.1}, {0.2, 0.2}});
    const auto targets = to_targets({{1, 0}, {0, 1}, {0, 0}});
    const MetricReport r = evaluate(scores, targets);
    // Two samples have positives and contribute 0; the empty one contributes 1.
    CHECK(r.instance_recall == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(r.instance_precision == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("randomized agreement with the set-based reference") {
    Rng rng(0xabcdef);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(12));
        const int L = 1 + static_cast<int>(rng.below(9));
        const double threshold = trial % 3 == 0 ? 0.3 : (trial % 3 == 1 ? 0.5 : 0.7);
        std::vector<std::vector<double>> scores(n, std::vector<double>(L));
        std::vector<std::vector<int>> targets(n, std::vector<int>(L));
        for (int i = 0; i < n; ++i)
            for (int l = 0; l < L; ++l) {
                scores[i][l] = rng.uniform();
                targets[i][l] = rng.bernoulli(0.4);
            }
        const MetricReport got = evaluate(to_scores(scores), to_targets(targets), threshold);
        const RefResult want = reference_eval(scores, targets, threshold);
        INFO("trial ", trial, " n ", n, " L ", L);
        CHECK(got.mA == doctest::Approx(want.mA).epsilon(1e-12));
        CHECK(got.instance_accuracy == doctest::Approx(want.acc).epsilon(1e-12));
        CHECK(got.instance_precision == doctest::Approx(want.prec).epsilon(1e-12));
        CHECK(got.instance_recall == doctest::Approx(want.rec).epsilon(1e-12));
        CHECK(got.instance_f1 == doctest::Approx(want.f1).epsilon(1e-12));
        for (const AttrCounts& c : got.per_attribute) CHECK(c.tp + c.fp + c.tn + c.fn == n);
    }
}

TEST_CASE("permutation and reordering invariance") {
    Rng rng(31);
    const int n = 7, L = 5;
    std::vector<std::vector<double>> scores(n, std::vector<double>(L));
    std::vector<std::vector<int>> targets(n, std::vector<int>(L));
    for (auto& r : scores)
        for (double& v : r) v = rng.uniform();
    for (auto& r : targets)
        for (int& v : r) v = rng.bernoulli(0.5);
    const MetricReport base = evaluate(to_scores(scores), to_targets(targets));

    SUBCASE("attribute columns permuted in lockstep") {
        const int perm[L] = {3, 0, 4, 1, 2};
        std::vector<std::vector<double>> ps(n, std::vector<double>(L));
        std::vector<std::vector<int>> pt(n, std::vector<int>(L));
        for (int i = 0; i < n; ++i)
            for (int l = 0; l < L; ++l) {
                ps[i][l] = scores[i][perm[l]];
                pt[i][l] = targets[i][perm[l]];
            }
        const MetricReport r = evaluate(to_scores(ps), to_targets(pt));
        CHECK(r.mA == doctest::Approx(base.mA).epsilon(1e-12));
        CHECK(r.instance_accuracy == base.instance_accuracy);
        CHECK(r.instance_f1 == base.instance_f1);
    }
    SUBCASE("samples reordered") {
        std::vector<std::vector<double>> rs(scores.rbegin(), scores.rend());
        std::vector<std::vector<int>> rt(targets.rbegin(), targets.rend());
        const MetricReport r = evaluate(to_scores(rs), to_targets(rt));
        CHECK(r.mA == doctest::Approx(base.mA).epsilon(1e-12));
        CHECK(r.instance_accuracy == doctest::Approx(base.instance_accuracy).epsilon(1e-12));
        CHECK(r.instance_recall == doctest::Approx(base.instance_recall).epsilon(1e-12));
    }
}

TEST_CASE("fixing one wrong prediction never hurts accuracy") {
    Rng rng(47);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(6));
        const int L = 2 + static_cast<int>(rng.below(6));
        std::vector<std::vector<double>> scores(n, std::vector<double>(L));
        std::vector<std::vector<int>> targets(n, std::vector<int>(L));
        for (int i = 0; i < n; ++i)
            for (int l = 0; l < L; ++l) {
                scores[i][l] = rng.uniform();
                targets[i][l] = rng.bernoulli(0.5);
            }
        // Find a wrong cell; flip its score to the correct side.
        int wi = -1, wl = -1;
        for (int i = 0; i < n && wi < 0; ++i)
            for (int l = 0; l < L && wi < 0; ++l)
                if ((scores[i][l] >= 0.5) != (targets[i][l] != 0)) wi = i, wl = l;
        if (wi < 0) continue;
        const MetricReport before = evaluate(to_scores(scores), to_targets(targets));
        scores[wi][wl] = targets[wi][wl] ? 0.9 : 0.1;
        const MetricReport after = evaluate(to_scores(scores), to_targets(targets));
        CHECK(after.instance_accuracy >= before.instance_accuracy - 1e-12);
    }
}

TEST_CASE("threshold extremes") {
    const auto scores = to_scores({{0.0, 0.4}, {0.99, 1.0}});
    const auto targets = to_targets({{1, 0}, {0, 1}});
    const MetricReport all_neg = evaluate(scores, targets, 1.1);
    for (const AttrCounts& c : all_neg.per_attribute) {
        CHECK(c.tp == 0);
        CHECK(c.fp == 0);
    }
    const MetricReport all_pos = evaluate(scores, targets, 0.0);
    for (const AttrCounts& c : all_pos.per_attribute) {
        CHECK(c.tn == 0);
        CHECK(c.fn == 0);
    }
    CHECK(all_pos.instance_recall == 1.0);
}

TEST_CASE("evaluate input validation") {
    const auto ok_scores = to_scores({{0.5, 0.5}});
    const auto ok_targets = to_targets({{1, 0}});
    CHECK_THROWS_AS(evaluate(Tensor::full(Shape{1, 2, 1, 2}, 0.5), ok_targets), ShapeError);
    CHECK_THROWS_AS(evaluate(ok_scores, to_targets({{1, 0, 1}})), ShapeError);
    CHECK_THROWS_AS(evaluate(to_scores({{1.2, 0.5}}), ok_targets), ConfigError);
    CHECK_THROWS_AS(evaluate(to_scores({{-0.1, 0.5}}), ok_targets), ConfigError);
    std::vector<std::uint8_t> bad = {1, 2};
    CHECK_THROWS_AS(evaluate(ok_scores, bad), ConfigError);
}

TEST_CASE("csv serialization") {
    const auto scores = to_scores({{0.9, 0.1}, {0.2, 0.7}});
    const auto targets = to_targets({{1, 0}, {0, 1}});
    const MetricReport r = evaluate(scores, targets);
    CHECK(MetricReport::csv_header() == "run,mA,accuracy,precision,recall,f1");
    const std::string row = r.csv_row("cas_r16");
    CHECK(row.substr(0, 8) == "cas_r16,");
    CHECK(std::count(row.begin(), row.end(), ',') == 5);
    CHECK(row.find("1.000000") != std::string::npos);
}
