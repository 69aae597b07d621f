// SPDX-License-Identifier: Apache-2.0
#include "m3/parameter_store.hpp"

#include <cmath>
#include <stdexcept>

#include "m3/container.hpp"
#include "m3/rng.hpp"

namespace m3 {

void ParameterStore::add(const std::string& name, Tensor value) {
  if (name.empty()) throw std::invalid_argument("parameter name must be nonempty");
  if (!params_.emplace(name, std::move(value)).second)
    throw std::invalid_argument("duplicate parameter name: " + name);
}

void ParameterStore::add_uniform(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out,
                                 Rng& rng) {
  Tensor t(std::move(shape));
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.values()) v = rng.uniform(-s, s);
  add(name, std::move(t));
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::span<double> ParameterStore::values(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second.data();
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParameterStore::total_values() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

void ParameterStore::assign(const ParameterStore& other) {
  if (other.params_.size() != params_.size())
    throw std::invalid_argument("parameter stores differ in size");
  for (auto& [name, t] : params_) {
    const Tensor& src = other.at(name);
    if (src.shape() != t.shape())
      throw std::invalid_argument("shape mismatch for " + name + ": " + shape_str(t.shape()) + " vs " +
                                  shape_str(src.shape()));
    t = src;
  }
}

void save_parameters(const std::filesystem::path& path, const ParameterStore& store, const nlohmann::json& extra) {
  Container c;
  c.header = extra;
  c.header["version"] = kParamsFormatVersion;
  auto& list = c.header["params"] = nlohmann::json::array();
  c.payload.reserve(store.total_values());
  for (const auto& [name, t] : store) {
    list.push_back({{"name", name}, {"shape", t.shape()}});
    c.payload.insert(c.payload.end(), t.values().begin(), t.values().end());
  }
  write_container(path, kParamsMagic, c);
}

namespace {
std::size_t params_payload(const nlohmann::json& header) {
  std::size_t n = 0;
  for (const auto& p : header.at("params")) n += numel(p.at("shape").get<Shape>());
  return n;
}
}  // namespace

LoadedParameters load_parameters(const std::filesystem::path& path) {
  Container c = read_container(path, kParamsMagic, kParamsFormatVersion, &params_payload);
  LoadedParameters out;
  std::size_t offset = 0;
  try {
    for (const auto& p : c.header.at("params")) {
      Shape shape = p.at("shape").get<Shape>();
      const std::size_t n = numel(shape);
      std::vector<double> data(c.payload.begin() + static_cast<std::ptrdiff_t>(offset),
                               c.payload.begin() + static_cast<std::ptrdiff_t>(offset + n));
      out.store.add(p.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
      offset += n;
    }
  } catch (const std::exception& e) {
    throw FormatError(FormatError::Kind::malformed_header, std::string("malformed header: ") + e.what());
  }
  c.header.erase("params");
  out.header = std::move(c.header);
  return out;
}

}  // namespace m3
