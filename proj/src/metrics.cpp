#include "micmco/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace micmco {

std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

const char* kMetricsCsvHeader =
    "step,nll,avg_kl,lambda,alpha,base,k_lik,k_mi,seed,wall_time_s";

std::string metrics_row_csv(const MetricsRow& r) {
  std::string out;
  out += std::to_string(r.step);
  out += ',';
  out += format_double(r.nll);
  out += ',';
  out += format_double(r.avg_kl);
  out += ',';
  out += format_double(r.lambda);
  out += ',';
  out += format_double(r.alpha);
  out += ',';
  out += r.base;
  out += ',';
  out += std::to_string(r.k_lik);
  out += ',';
  out += std::to_string(r.k_mi);
  out += ',';
  out += std::to_string(r.seed);
  out += ',';
  out += format_double(r.wall_time_s);
  return out;
}

void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CsvError("cannot open " + path + " for writing");
  f << kMetricsCsvHeader << '\n';
  for (const auto& r : rows) f << metrics_row_csv(r) << '\n';
  if (!f) throw CsvError("write failed for " + path);
}

std::vector<ParetoPoint> pareto_frontier(const std::vector<ParetoPoint>& points) {
  struct Indexed {
    ParetoPoint p;
    size_t order;
  };
  std::vector<Indexed> v;
  v.reserve(points.size());
  for (size_t i = 0; i < points.size(); ++i) v.push_back({points[i], i});
  // scan from high avg_kl down; a point survives iff its nll beats everything
  // with avg_kl >= its own
  std::stable_sort(v.begin(), v.end(), [](const Indexed& a, const Indexed& b) {
    if (a.p.avg_kl != b.p.avg_kl) return a.p.avg_kl > b.p.avg_kl;
    if (a.p.nll != b.p.nll) return a.p.nll < b.p.nll;
    return a.order < b.order;
  });
  std::vector<ParetoPoint> out;
  double best_nll = std::numeric_limits<double>::infinity();
  for (const auto& e : v) {
    if (e.p.nll < best_nll) {
      out.push_back(e.p);
      best_nll = e.p.nll;
    }
  }
  std::reverse(out.begin(), out.end());  // avg_kl ascending
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double_field(const std::string& s, int line) {
  double v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::general);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
    throw CsvError("line " + std::to_string(line) + ": invalid number '" + s + "'");
  return v;
}

}  // namespace

std::vector<ParetoPoint> read_points_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CsvError("cannot open " + path);
  std::string header;
  if (!std::getline(f, header)) throw CsvError(path + ": empty file");
  std::vector<std::string> cols = split_csv_line(header);
  int ikl = -1, inll = -1, iid = -1;
  for (size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] == "avg_kl") ikl = int(i);
    if (cols[i] == "nll") inll = int(i);
    if (cols[i] == "run_id") iid = int(i);
  }
  if (ikl < 0 || inll < 0)
    throw CsvError(path + ": missing required columns nll and avg_kl");
  std::vector<ParetoPoint> out;
  std::string line;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != cols.size())
      throw CsvError("line " + std::to_string(lineno) + ": expected " +
                     std::to_string(cols.size()) + " fields");
    ParetoPoint p;
    p.avg_kl = parse_double_field(fields[size_t(ikl)], lineno);
    p.nll = parse_double_field(fields[size_t(inll)], lineno);
    p.run_id = iid >= 0 ? fields[size_t(iid)] : "row" + std::to_string(lineno - 1);
    out.push_back(std::move(p));
  }
  return out;
}

void write_frontier_csv(const std::string& path, std::span<const ParetoPoint> points) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CsvError("cannot open " + path + " for writing");
  f << "avg_kl,nll,run_id\n";
  for (const auto& p : points)
    f << format_double(p.avg_kl) << ',' << format_double(p.nll) << ',' << p.run_id
      << '\n';
  if (!f) throw CsvError("write failed for " + path);
}

}  // namespace micmco
