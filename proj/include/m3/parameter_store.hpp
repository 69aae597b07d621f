// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "m3/tensor.hpp"

namespace m3 {

class Rng;

/// Named parameter tensors, iterated in name order. Names are unique and a
/// tensor's shape never changes after `add`; only values are mutable.
class ParameterStore {
 public:
  /// Adds a new tensor. Throws if the name is taken.
  void add(const std::string& name, Tensor value);
  /// Glorot-uniform matrix: U[-s, s], s = sqrt(6 / (fan_in + fan_out)).
  void add_uniform(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
  void add_zeros(const std::string& name, Shape shape) { add(name, Tensor(std::move(shape))); }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  std::span<double> values(const std::string& name);

  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  std::size_t total_values() const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Copies values from `other`; names and shapes must match exactly.
  void assign(const ParameterStore& other);

  friend bool operator==(const ParameterStore&, const ParameterStore&) = default;

 private:
  std::map<std::string, Tensor> params_;
};

/// Writes the store as a params container. `extra` is merged into the JSON
/// header (hyperparameters, vocabulary); the keys "version" and "params"
/// are reserved.
void save_parameters(const std::filesystem::path& path, const ParameterStore& store,
                     const nlohmann::json& extra = nlohmann::json::object());

struct LoadedParameters {
  ParameterStore store;
  nlohmann::json header;
};

LoadedParameters load_parameters(const std::filesystem::path& path);

inline constexpr int kParamsFormatVersion = 1;

}  // namespace m3
