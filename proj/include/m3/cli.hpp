// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "m3/grad_check.hpp"
#include "m3/model.hpp"

namespace m3::cli {

/// Model settings plus data and output paths. In a config file the path
/// keys sit next to the model keys; anything else is rejected.
struct RunConfig {
  ModelConfig model;
  std::string features;
  std::string captions;
  std::string val_features;
  std::string val_captions;
  std::string checkpoint;
  std::string output;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

/// memory 4 x 8, hidden 8, embed 8, attention 5, feature width 6, vocab 12,
/// 2 frames, no dropout.
ModelConfig micro_config();

/// Gradient check of the teacher-forced loss of one random video and caption
/// (`tokens` long, EOS last) under `config`. Biases are randomised so no
/// gradient is trivially zero. `corrupt` perturbs one analytic entry.
GradCheckReport micro_gradcheck(const ModelConfig& config, double step, bool corrupt = false,
                                std::size_t tokens = 3);

/// Entry point. Returns the process exit status: 0 on success, 1 on runtime
/// failure, 2 on usage or configuration errors.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace m3::cli
