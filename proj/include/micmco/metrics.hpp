#pragma once

#include "micmco/trainer.hpp"

#include <span>
#include <string>
#include <vector>

namespace micmco {

struct CsvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Locale-independent shortest round-trip formatting ('.' decimal separator).
std::string format_double(double v);

extern const char* kMetricsCsvHeader;  // step,nll,avg_kl,...,wall_time_s

std::string metrics_row_csv(const MetricsRow& row);
void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows);

struct ParetoPoint {
  double avg_kl = 0.0;
  double nll = 0.0;
  std::string run_id;
};

/// Non-dominated subset under (maximize avg_kl, minimize nll); exact ties on
/// both coordinates keep the first-seen row. Output sorted by avg_kl ascending.
std::vector<ParetoPoint> pareto_frontier(const std::vector<ParetoPoint>& points);

/// Reads any CSV with avg_kl and nll columns (run_id optional; row index
/// otherwise). Throws CsvError when the columns are missing.
std::vector<ParetoPoint> read_points_csv(const std::string& path);
void write_frontier_csv(const std::string& path, std::span<const ParetoPoint> points);

}  // namespace micmco
