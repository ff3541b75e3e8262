#pragma once

#include <functional>
#include <string>
#include <vector>

#include "casnet/tape.hpp"

namespace casnet {

struct GradCheckReport {
    double max_rel_err = 0.0;
    /// Smoothness margin of the analytic evaluation; comparisons are only
    /// meaningful when this exceeds ~10 * eps (resample the instance otherwise).
    double margin = 0.0;
    std::string worst;  // "param_name[i]" of the largest error
};

/// Central finite-difference check of a scalar-valued computation against the
/// tape's analytic gradients. `f` must rebuild the computation from the
/// current parameter values each call. Error metric per entry:
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckReport grad_check(const std::function<Tensor(Tape&)>& f,
                           const std::vector<Param*>& params, double eps);

}  // namespace casnet
