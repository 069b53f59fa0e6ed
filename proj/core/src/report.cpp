// SPDX-License-Identifier: Apache-2.0
#include "dpcsi/evalkit.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace dpcsi {

namespace {

std::string fmt17(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void write_table(const std::string& path, const std::string& header,
                 const std::vector<std::vector<double>>& rows) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error(io_errc::io_fail, "cannot open " + path);
  f << header << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) f << ",";
      f << fmt17(row[i]);
    }
    f << "\n";
  }
  f.flush();
  if (!f) throw io_error(io_errc::io_fail, "short write to " + path);
}

void emit_report(const EvalReport& report, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);

  kv_write_file(report.summary, (base / "summary.kv").string());

  std::vector<std::vector<double>> rows;
  rows.reserve(report.per_sample_db.size());
  for (std::size_t i = 0; i < report.per_sample_db.size(); ++i)
    rows.push_back({static_cast<double>(i), report.per_sample_db[i]});
  write_table((base / "per_sample.csv").string(), "index,nmse_db", rows);

  rows.clear();
  rows.reserve(report.cdf.size());
  for (const auto& p : report.cdf) rows.push_back({p.value_db, p.fraction});
  write_table((base / "cdf.csv").string(), "nmse_db,fraction", rows);

  if (!report.rate.snr_db.empty()) {
    rows.clear();
    rows.reserve(report.rate.snr_db.size());
    for (std::size_t i = 0; i < report.rate.snr_db.size(); ++i)
      rows.push_back({report.rate.snr_db[i], report.rate.perfect[i],
                      report.rate.recovered[i]});
    write_table((base / "rate.csv").string(),
                "snr_db,rate_perfect,rate_recovered", rows);
  }
}

}  // namespace dpcsi
