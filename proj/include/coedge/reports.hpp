#pragma once

// Evaluation artifacts on disk: PR curves as CSV, reports as JSON with a
// config echo and host annotation.

#include "coedge/checkpoint.hpp"
#include "coedge/evaluation.hpp"

#include <fstream>
#include <iomanip>

#ifdef __linux__
#include <unistd.h>
#endif

namespace coedge::eval {

inline void write_pr_csv(const std::filesystem::path& path,
                         const std::vector<PrPoint>& points) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write PR csv: " + path.string());
  os << "threshold,precision,recall,f\n";
  os << std::setprecision(10);
  for (const auto& p : points)
    os << p.threshold << ',' << p.precision << ',' << p.recall << ',' << p.f
       << '\n';
}

inline std::vector<PrPoint> read_pr_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open PR csv: " + path.string());
  std::string header;
  std::getline(is, header);
  if (header != "threshold,precision,recall,f")
    throw DataError("unexpected PR csv header in " + path.string());
  std::vector<PrPoint> points;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    PrPoint p;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &p.threshold, &p.precision,
                    &p.recall, &p.f) != 4)
      throw DataError("malformed PR csv row: " + line);
    points.push_back(p);
  }
  return points;
}

inline io::Json report_to_json(const EvalReport& report, const io::Json& config_echo) {
  io::Json j;
  j["ods_f"] = report.ods_f;
  j["ois_f"] = report.ois_f;
  j["ods_threshold"] = report.ods_threshold;
  j["throughput_fps"] = report.throughput_fps;
  j["param_count"] = report.param_count;
  j["config"] = config_echo;
  char host[256] = "unknown";
#ifdef __linux__
  if (gethostname(host, sizeof(host)) != 0) std::snprintf(host, sizeof(host), "unknown");
#endif
  j["host"] = std::string(host);
  j["threads_available"] = int(std::thread::hardware_concurrency());
  return j;
}

inline void write_report(const std::filesystem::path& path,
                         const EvalReport& report, const io::Json& config_echo) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write report: " + path.string());
  os << report_to_json(report, config_echo).dump(2) << '\n';
}

}  // namespace coedge::eval
