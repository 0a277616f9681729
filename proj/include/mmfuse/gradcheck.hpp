#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmfuse/autodiff.hpp"

namespace mmfuse {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    int64_t elements_checked = 0;
    bool finite = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    bool all_finite = true;

    bool ok(double tolerance) const { return all_finite && max_rel_err <= tolerance; }
    std::string summary() const;
};

// Forward pass returning the scalar loss. Must be deterministic and depend
// on parameter values only through `store`.
using LossValueFn = std::function<double()>;
// Forward + backward accumulating gradients into the store.
using LossGradFn = std::function<double()>;

// Central finite differences against the analytic gradient, per trainable
// parameter. rel_err = |ga - gn| / max(|ga|, |gn|, 1e-8).
// max_elements_per_param == 0 checks every element; otherwise a deterministic
// evenly-strided subset of that size.
GradCheckReport finite_difference_check(ParameterStore& store, const LossValueFn& loss_value,
                                        const LossGradFn& loss_grad, double step = 1e-5,
                                        int64_t max_elements_per_param = 0);

}  // namespace mmfuse
