#include "casnet/grad_check.hpp"

#include <cmath>

namespace casnet {

GradCheckReport grad_check(const std::function<Tensor(Tape&)>& f,
                           const std::vector<Param*>& params, double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-4)) {
        throw ConfigError("grad_check: eps must be in [1e-7, 1e-4]");
    }

    GradCheckReport report;

    // analytic pass
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        Tensor y = f(tape);
        if (y.numel() != 1) {
            throw ShapeError("grad_check: f must be scalar-valued, got " + y.shape().str());
        }
        zero_grads(params);
        tape.backward(y);
        report.margin = tape.smooth_margin();
        analytic.reserve(params.size());
        for (Param* p : params) analytic.push_back(p->grad.data());
    }

    auto eval = [&f]() {
        Tape tape(false);
        return f(tape)[0];
    };

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param* p = params[pi];
        auto& values = p->value.raw();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + eps;
            const double up = eval();
            values[i] = saved - eps;
            const double down = eval();
            values[i] = saved;

            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[pi][i];
            const double rel =
                std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

}  // namespace casnet
