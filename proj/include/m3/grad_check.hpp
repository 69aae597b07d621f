// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

#include "m3/parameter_store.hpp"
#include "m3/tape.hpp"

namespace m3 {

/// Builds a scalar loss on the given tape from the given parameters. Must be
/// deterministic.
using LossFn = std::function<Var(Tape&, const ParameterStore&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries = 0;
};

/// Compares the tape gradient against central differences over every entry
/// of every parameter:
///   err = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
/// `tamper`, when set, is applied to the analytic gradients before the
/// comparison (harness self-test).
GradCheckReport grad_check(const LossFn& fn, const ParameterStore& store, double step,
                           const std::function<void(GradientMap&)>& tamper = {});

}  // namespace m3
