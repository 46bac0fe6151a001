#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fseg/volume.hpp"

namespace fseg {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;
  [[nodiscard]] std::uint64_t total() const { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Throws std::invalid_argument on shape mismatch.
[[nodiscard]] ConfusionCounts confusion(const MaskVolume& pred, const MaskVolume& gt);

// 2TP / (2TP + FP + FN); 1 when both masks are empty.
[[nodiscard]] double dsc(const ConfusionCounts& c);
// 1 - |FN - FP| / (2TP + FP + FN); 1 when both masks are empty.
[[nodiscard]] double vs(const ConfusionCounts& c);

struct VolumeScore {
  std::string id;
  double dsc = 0.0;
  double vs = 0.0;
};

struct EvalReport {
  std::vector<VolumeScore> rows;
  double mean_dsc = 0.0;
  double std_dsc = 0.0;
  double mean_vs = 0.0;
  double std_vs = 0.0;
  std::vector<std::pair<std::string, std::string>> config;
};

// Population standard deviation over rows.
[[nodiscard]] EvalReport summarize(std::vector<VolumeScore> rows,
                                   std::vector<std::pair<std::string, std::string>> config = {});

// Human-readable table in percent, mean +- std like the usual results tables.
[[nodiscard]] std::string format_table(const EvalReport& r);
// Machine-readable rows: "id,dsc,vs" then "mean,..." and "std,...".
[[nodiscard]] std::string format_csv(const EvalReport& r);

}  // namespace fseg
