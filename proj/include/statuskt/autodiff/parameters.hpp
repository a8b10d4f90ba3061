#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "statuskt/autodiff/tensor.hpp"
#include "statuskt/random.hpp"

namespace statuskt::ad {

/// Named, ordered collection of trainable tensors.
template <typename T>
class ParameterSet {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> tensor) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, tensor);
    return tensor;
  }

  /// Weight matrix [fan_in, fan_out] drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  /// Each parameter draws from its own name-derived stream, so adding or
  /// removing other parameters never changes its initial values.
  Tensor<T> weight(const std::string& name, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
    Rng rng(sub_seed(seed, name));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> data(fan_in * fan_out);
    for (auto& x : data) x = T(rng.uniform(-bound, bound));
    return add(name, Tensor<T>::from({fan_in, fan_out}, std::move(data), true));
  }

  Tensor<T> bias(const std::string& name, std::size_t n) { return add(name, Tensor<T>::zeros({n}, true)); }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Tensor<T> operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& [name, t] : entries_) out.push_back(t);
    return out;
  }

  void zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

  /// Copies of all parameter values, for best-epoch snapshots.
  std::vector<std::vector<T>> snapshot() const {
    std::vector<std::vector<T>> out;
    for (const auto& [name, t] : entries_) out.emplace_back(t.data().begin(), t.data().end());
    return out;
  }

  void restore(const std::vector<std::vector<T>>& values) {
    if (values.size() != entries_.size()) throw ShapeError("snapshot does not match parameter set");
    for (std::size_t j = 0; j < entries_.size(); ++j) {
      auto dst = entries_[j].second.mutable_data();
      if (values[j].size() != dst.size()) throw ShapeError("snapshot size mismatch for " + entries_[j].first);
      std::copy(values[j].begin(), values[j].end(), dst.begin());
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

// Checkpoint layout (JSON):
//   { "format": "statuskt-checkpoint", "version": 1,
//     "tensors": { "<name>": { "shape": [d0, d1, ...], "data": [row-major values] }, ... },
//     "config": { ...free-form echo of the model configuration... } }
// Values are written as shortest round-trip decimal doubles.

inline constexpr const char* kCheckpointFormat = "statuskt-checkpoint";

template <typename T>
nlohmann::json tensors_to_json(const ParameterSet<T>& params) {
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, t] : params.entries()) {
    std::vector<double> data(t.data().begin(), t.data().end());
    tensors[name] = {{"shape", t.shape()}, {"data", data}};
  }
  return tensors;
}

/// Overwrites every parameter from `tensors`; names and shapes must match exactly.
template <typename T>
void tensors_from_json(ParameterSet<T>& params, const nlohmann::json& tensors) {
  if (!tensors.is_object()) throw ValidationError("checkpoint 'tensors' must be an object");
  if (tensors.size() != params.size())
    throw ValidationError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
  for (const auto& [name, t] : params.entries()) {
    if (!tensors.contains(name)) throw ValidationError("checkpoint lacks tensor " + name);
    const auto& entry = tensors.at(name);
    const auto shape = entry.at("shape").template get<Shape>();
    if (shape != t.shape())
      throw ValidationError("checkpoint shape " + to_string(shape) + " for " + name + ", model expects " +
                            to_string(t.shape()));
    const auto data = entry.at("data").template get<std::vector<double>>();
    if (data.size() != t.size()) throw ValidationError("checkpoint data length mismatch for " + name);
    auto dst = params[name].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) dst[i] = T(data[i]);
  }
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params,
                     const nlohmann::json& config = nlohmann::json::object()) {
  nlohmann::json doc = {{"format", kCheckpointFormat}, {"version", 1}, {"tensors", tensors_to_json(params)},
                        {"config", config}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << doc.dump() << '\n';
}

inline nlohmann::json read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("checkpoint " + path.string() + ": " + e.what());
  }
  if (doc.value("format", "") != kCheckpointFormat) throw ValidationError(path.string() + " is not a checkpoint");
  return doc;
}

}  // namespace statuskt::ad
