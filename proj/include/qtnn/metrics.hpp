#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace qtnn {

// One CSV row of per-epoch results.
struct MetricsRecord {
  std::size_t epoch = 0;
  std::string split;  // "train" or "test"
  double loss = 0.0;
  double accuracy = 0.0;
  std::string model;
  std::uint64_t seed = 0;
  std::uint64_t wall_ms = 0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

using MetricsLog = std::vector<MetricsRecord>;

}  // namespace qtnn
