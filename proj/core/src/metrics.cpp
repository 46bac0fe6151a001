#include "fseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace fseg {

ConfusionCounts confusion(const MaskVolume& pred, const MaskVolume& gt) {
  if (!(pred.shape() == gt.shape())) throw std::invalid_argument("confusion: mask shapes differ");
  ConfusionCounts c;
  const auto p = pred.data.values();
  const auto g = gt.data.values();
  for (std::size_t n = 0; n < p.size(); ++n) {
    const bool a = p[n] != 0, b = g[n] != 0;
    if (a && b) ++c.tp;
    else if (a) ++c.fp;
    else if (b) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double dsc(const ConfusionCounts& c) {
  const double denom = 2.0 * static_cast<double>(c.tp) + static_cast<double>(c.fp) + static_cast<double>(c.fn);
  return denom > 0.0 ? 2.0 * static_cast<double>(c.tp) / denom : 1.0;
}

double vs(const ConfusionCounts& c) {
  const double denom = 2.0 * static_cast<double>(c.tp) + static_cast<double>(c.fp) + static_cast<double>(c.fn);
  if (denom <= 0.0) return 1.0;
  const double diff = c.fn > c.fp ? static_cast<double>(c.fn - c.fp) : static_cast<double>(c.fp - c.fn);
  return 1.0 - diff / denom;
}

EvalReport summarize(std::vector<VolumeScore> rows, std::vector<std::pair<std::string, std::string>> config) {
  EvalReport r;
  r.rows = std::move(rows);
  r.config = std::move(config);
  if (r.rows.empty()) return r;
  const double n = static_cast<double>(r.rows.size());
  for (const auto& row : r.rows) {
    r.mean_dsc += row.dsc / n;
    r.mean_vs += row.vs / n;
  }
  for (const auto& row : r.rows) {
    r.std_dsc += (row.dsc - r.mean_dsc) * (row.dsc - r.mean_dsc) / n;
    r.std_vs += (row.vs - r.mean_vs) * (row.vs - r.mean_vs) / n;
  }
  r.std_dsc = std::sqrt(r.std_dsc);
  r.std_vs = std::sqrt(r.std_vs);
  return r;
}

std::string format_table(const EvalReport& r) {
  std::ostringstream os;
  char buf[160];
  for (const auto& [k, v] : r.config) os << "# " << k << " = " << v << "\n";
  std::snprintf(buf, sizeof buf, "%-24s %10s %10s\n", "volume", "DSC (%)", "VS (%)");
  os << buf;
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-24s %10.1f %10.1f\n", row.id.c_str(), 100.0 * row.dsc, 100.0 * row.vs);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-24s %4.1f+-%-4.1f %4.1f+-%-4.1f\n", "mean+-std", 100.0 * r.mean_dsc,
                100.0 * r.std_dsc, 100.0 * r.mean_vs, 100.0 * r.std_vs);
  os << buf;
  return os.str();
}

std::string format_csv(const EvalReport& r) {
  std::ostringstream os;
  char buf[160];
  os << "id,dsc,vs\n";
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f\n", row.id.c_str(), row.dsc, row.vs);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "mean,%.6f,%.6f\nstd,%.6f,%.6f\n", r.mean_dsc, r.mean_vs, r.std_dsc, r.std_vs);
  os << buf;
  return os.str();
}

}  // namespace fseg
