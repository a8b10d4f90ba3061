#pragma once

#include <array>
#include <cmath>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <string_view>

#include "statuskt/errors.hpp"

namespace statuskt {

/// The four observable strands of mathematical proficiency.
enum class Dimension { CU = 0, SC = 1, PF = 2, AR = 3 };

inline constexpr std::array<Dimension, 4> kDimensions{Dimension::CU, Dimension::SC, Dimension::PF, Dimension::AR};
inline constexpr std::size_t kNumDimensions = kDimensions.size();

constexpr std::string_view to_string(Dimension d) {
  switch (d) {
    case Dimension::CU: return "CU";
    case Dimension::SC: return "SC";
    case Dimension::PF: return "PF";
    case Dimension::AR: return "AR";
  }
  return "?";
}

inline std::optional<Dimension> parse_dimension(std::string_view s) {
  for (auto d : kDimensions)
    if (s == to_string(d)) return d;
  return std::nullopt;
}

constexpr std::size_t index(Dimension d) { return static_cast<std::size_t>(d); }

struct DimensionCount {
  int satisfied = 0;
  int total = 0;

  friend bool operator==(const DimensionCount&, const DimensionCount&) = default;
};

/// Per-strand proportion of satisfied indicators. The ratio is always derived
/// from the counts, so value == satisfied / total holds by construction; a
/// strand with total == 0 is absent.
class MPRatios {
 public:
  MPRatios() = default;

  /// All four strands absent; marks an interaction whose annotation failed.
  static MPRatios absent() { return {}; }

  static MPRatios from_counts(const std::array<DimensionCount, kNumDimensions>& counts) {
    for (auto d : kDimensions) {
      const auto& c = counts[index(d)];
      if (c.total < 0 || c.satisfied < 0 || c.satisfied > c.total)
        throw ValidationError("invalid " + std::string(to_string(d)) + " count " + std::to_string(c.satisfied) +
                              "/" + std::to_string(c.total));
    }
    MPRatios r;
    r.counts_ = counts;
    return r;
  }

  const DimensionCount& count(Dimension d) const { return counts_[index(d)]; }
  const std::array<DimensionCount, kNumDimensions>& counts() const { return counts_; }

  bool present(Dimension d) const { return counts_[index(d)].total > 0; }
  bool any_present() const {
    for (auto d : kDimensions)
      if (present(d)) return true;
    return false;
  }

  /// satisfied / total, or 0 for an absent strand.
  double value(Dimension d) const {
    const auto& c = counts_[index(d)];
    return c.total > 0 ? static_cast<double>(c.satisfied) / static_cast<double>(c.total) : 0.0;
  }

  friend bool operator==(const MPRatios&, const MPRatios&) = default;

 private:
  std::array<DimensionCount, kNumDimensions> counts_{};
};

// JSON: {"CU": {"satisfied": 2, "total": 3, "value": 0.666...}, ..., "AR": {"satisfied": 0, "total": 0, "value": null}}
inline nlohmann::json to_json_value(const MPRatios& mp) {
  nlohmann::json j = nlohmann::json::object();
  for (auto d : kDimensions) {
    const auto& c = mp.count(d);
    nlohmann::json entry = {{"satisfied", c.satisfied}, {"total", c.total}};
    entry["value"] = mp.present(d) ? nlohmann::json(mp.value(d)) : nlohmann::json(nullptr);
    j[std::string(to_string(d))] = entry;
  }
  return j;
}

inline MPRatios mp_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("mp must be an object");
  std::array<DimensionCount, kNumDimensions> counts{};
  for (auto d : kDimensions) {
    const std::string key(to_string(d));
    if (!j.contains(key)) continue;
    const auto& e = j.at(key);
    if (!e.is_object() || !e.contains("satisfied") || !e.contains("total") || !e.at("satisfied").is_number_integer() ||
        !e.at("total").is_number_integer())
      throw ValidationError("mp." + key + " needs integer 'satisfied' and 'total'");
    counts[index(d)] = {e.at("satisfied").get<int>(), e.at("total").get<int>()};
  }
  auto mp = MPRatios::from_counts(counts);
  for (auto d : kDimensions) {
    const std::string key(to_string(d));
    if (!j.contains(key) || !j.at(key).contains("value") || j.at(key).at("value").is_null()) continue;
    const auto& v = j.at(key).at("value");
    if (!v.is_number() || !mp.present(d) || std::abs(v.get<double>() - mp.value(d)) > 1e-9)
      throw ValidationError("mp." + key + ".value disagrees with its counts");
  }
  return mp;
}

}  // namespace statuskt
