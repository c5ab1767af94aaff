#pragma once

#include <string>
#include <vector>

#include "spar/metrics.hpp"
#include "spar/protocols.hpp"
#include "spar/train.hpp"

namespace spar {

// Shortest round-trip text for a double ("%.17g"); NaN prints as "nan".
std::string format_number(double v);

// step,loss,signal,spatial
std::string loss_csv(const std::vector<LossRecord>& history);

struct MetricsRow {
  std::string protocol;
  std::string variant;
  std::uint64_t seed = 0;
  double label_ratio = 1.0;
  double drop_rate = 0.0;
  Metrics metrics;
};

// protocol,variant,seed,label_ratio,drop_rate,mse,dist_err,accuracy,macro_f1,count
std::string metrics_csv(const std::vector<MetricsRow>& rows);

// variant,seed,noise,error,baseline
std::string probe_csv(const std::string& variant, std::uint64_t seed, const std::vector<ProbePoint>& curve);

}  // namespace spar
