#include "casnet/metrics.hpp"

#include <cstdio>

namespace casnet {

std::string MetricReport::csv_header() { return "run,mA,accuracy,precision,recall,f1"; }

std::string MetricReport::csv_row(const std::string& run_id) const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f", mA, instance_accuracy,
                  instance_precision, instance_recall, instance_f1);
    return run_id + "," + buf;
}

MetricReport evaluate(const Tensor& scores, const std::vector<std::uint8_t>& targets,
                      double threshold) {
    const Shape& s = scores.shape();
    if (s.h != 1 || s.w != 1) throw ShapeError("evaluate: scores must be (N,1,1,L), got " + s.str());
    const int n = s.n, L = s.c;
    if (n == 0 || L == 0) throw ShapeError("evaluate: empty score tensor");
    if (targets.size() != static_cast<size_t>(n) * L)
        throw ShapeError("evaluate: targets size " + std::to_string(targets.size()) +
                         " does not match " + std::to_string(n) + "x" + std::to_string(L));
    const std::vector<double>& sc = scores.data();
    for (double v : sc)
        if (!(v >= 0.0 && v <= 1.0))
            throw ConfigError("evaluate: score " + std::to_string(v) + " outside [0,1]");
    for (std::uint8_t t : targets)
        if (t > 1) throw ConfigError("evaluate: targets must be 0/1");

    MetricReport rep;
    rep.per_attribute.assign(static_cast<size_t>(L), AttrCounts{});
    double acc = 0.0, prec = 0.0, rec = 0.0;
    for (int i = 0; i < n; ++i) {
        std::int64_t inter = 0, npred = 0, ntrue = 0;
        for (int l = 0; l < L; ++l) {
            const bool pred = sc[static_cast<size_t>(i) * L + l] >= threshold;
            const bool truth = targets[static_cast<size_t>(i) * L + l] != 0;
            AttrCounts& c = rep.per_attribute[static_cast<size_t>(l)];
            if (pred && truth) ++c.tp;
            else if (pred) ++c.fp;
            else if (truth) ++c.fn;
            else ++c.tn;
            inter += pred && truth;
            npred += pred;
            ntrue += truth;
        }
        const std::int64_t uni = npred + ntrue - inter;
        acc += uni > 0 ? double(inter) / double(uni) : 1.0;
        prec += npred > 0 ? double(inter) / double(npred) : (ntrue == 0 ? 1.0 : 0.0);
        rec += ntrue > 0 ? double(inter) / double(ntrue) : 1.0;
    }
    rep.instance_accuracy = acc / n;
    rep.instance_precision = prec / n;
    rep.instance_recall = rec / n;
    const double pr = rep.instance_precision + rep.instance_recall;
    rep.instance_f1 = pr > 0.0 ? 2.0 * rep.instance_precision * rep.instance_recall / pr : 0.0;

    double ma = 0.0;
    int valid = 0;
    for (int l = 0; l < L; ++l) {
        const AttrCounts& c = rep.per_attribute[static_cast<size_t>(l)];
        const std::int64_t pos = c.tp + c.fn, neg = c.tn + c.fp;
        if (pos == 0 || neg == 0) {
            ++rep.degenerate_attributes;
            std::fprintf(stderr,
                         "warning: attribute %d is %s in this batch, excluded from mA\n", l,
                         pos == 0 ? "all-negative" : "all-positive");
            continue;
        }
        ma += 0.5 * (double(c.tp) / double(pos) + double(c.tn) / double(neg));
        ++valid;
    }
    rep.mA = valid > 0 ? ma / valid : 0.0;
    return rep;
}

}  // namespace casnet
