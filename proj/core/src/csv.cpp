#include "spar/csv.hpp"

#include <cmath>
#include <cstdio>

namespace spar {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string loss_csv(const std::vector<LossRecord>& history) {
  std::string out = "step,loss,signal,spatial\n";
  for (const auto& r : history) {
    out += std::to_string(r.step) + "," + format_number(r.loss) + "," + format_number(r.signal) + "," +
           format_number(r.spatial) + "\n";
  }
  return out;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "protocol,variant,seed,label_ratio,drop_rate,mse,dist_err,accuracy,macro_f1,count\n";
  for (const auto& r : rows) {
    out += r.protocol + "," + r.variant + "," + std::to_string(r.seed) + "," + format_number(r.label_ratio) + "," +
           format_number(r.drop_rate) + "," + format_number(r.metrics.mse) + "," + format_number(r.metrics.dist_err) +
           "," + format_number(r.metrics.accuracy) + "," + format_number(r.metrics.macro_f1) + "," +
           std::to_string(r.metrics.count) + "\n";
  }
  return out;
}

std::string probe_csv(const std::string& variant, std::uint64_t seed, const std::vector<ProbePoint>& curve) {
  std::string out = "variant,seed,noise,error,baseline\n";
  for (const auto& p : curve) {
    out += variant + "," + std::to_string(seed) + "," + format_number(p.noise) + "," + format_number(p.error) + "," +
           format_number(p.baseline) + "\n";
  }
  return out;
}

}  // namespace spar
