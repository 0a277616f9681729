#include "mmfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mmfuse {

std::string GradCheckReport::summary() const {
    std::ostringstream out;
    for (const auto& e : entries) {
        out << e.name << ": max_rel_err=" << e.max_rel_err << " over " << e.elements_checked << " elements"
            << (e.finite ? "" : " [NON-FINITE]") << "\n";
    }
    out << "overall max_rel_err=" << max_rel_err << (all_finite ? "" : " [NON-FINITE]") << "\n";
    return out.str();
}

GradCheckReport finite_difference_check(ParameterStore& store, const LossValueFn& loss_value,
                                        const LossGradFn& loss_grad, double step, int64_t max_elements_per_param) {
    store.zero_grads();
    loss_grad();

    GradCheckReport report;
    for (auto& [name, param] : store) {
        if (!param.trainable) {
            continue;
        }
        GradCheckEntry entry;
        entry.name = name;
        const int64_t n = param.value.numel();
        int64_t stride = 1;
        if (max_elements_per_param > 0 && n > max_elements_per_param) {
            stride = (n + max_elements_per_param - 1) / max_elements_per_param;
        }
        for (int64_t i = 0; i < n; i += stride) {
            const double saved = param.value.at(i);
            param.value.at(i) = saved + step;
            const double f_plus = loss_value();
            param.value.at(i) = saved - step;
            const double f_minus = loss_value();
            param.value.at(i) = saved;

            const double numeric = (f_plus - f_minus) / (2.0 * step);
            const double analytic = param.grad.at(i);
            ++entry.elements_checked;
            if (!std::isfinite(numeric) || !std::isfinite(analytic)) {
                entry.finite = false;
                continue;
            }
            const double scale = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            entry.max_rel_err = std::max(entry.max_rel_err, std::fabs(analytic - numeric) / scale);
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.all_finite = report.all_finite && entry.finite;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace mmfuse
