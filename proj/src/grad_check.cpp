// SPDX-License-Identifier: Apache-2.0
#include "m3/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace m3 {

namespace {
double evaluate(const LossFn& fn, const ParameterStore& store) {
  Tape tape(false);
  const double v = fn(tape, store).value().item();
  if (!std::isfinite(v)) throw std::domain_error("grad_check: loss is not finite");
  return v;
}
}  // namespace

GradCheckReport grad_check(const LossFn& fn, const ParameterStore& store, double step,
                           const std::function<void(GradientMap&)>& tamper) {
  if (!(step > 0)) throw std::invalid_argument("grad_check: step must be positive");

  GradientMap analytic;
  {
    Tape tape(true);
    Var loss = fn(tape, store);
    if (!std::isfinite(loss.value().item())) throw std::domain_error("grad_check: loss is not finite");
    analytic = tape.backward(loss, store);
  }
  if (tamper) tamper(analytic);

  GradCheckReport report;
  ParameterStore probe = store;
  for (const auto& name : store.names()) {
    auto values = probe.values(name);
    const Tensor& g = analytic.at(name);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = evaluate(fn, probe);
      values[i] = saved - step;
      const double down = evaluate(fn, probe);
      values[i] = saved;

      const double numeric = (up - down) / (2.0 * step);
      const double a = g[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++report.entries;
      report.max_abs_error = std::max(report.max_abs_error, std::abs(a - numeric));
      if (err > report.max_rel_error || report.worst_param.empty()) {
        report.max_rel_error = err;
        report.worst_param = name;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace m3
