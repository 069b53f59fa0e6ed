// SPDX-License-Identifier: Apache-2.0
#include "dpcsi/kv.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dpcsi/common.hpp"

namespace dpcsi {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

bool KvFile::has(const std::string& key) const {
  for (const auto& [k, v] : items)
    if (k == key) return true;
  return false;
}

const std::string& KvFile::get(const std::string& key) const {
  for (const auto& [k, v] : items)
    if (k == key) return v;
  throw std::out_of_range("kv: missing key '" + key + "'");
}

std::string KvFile::get_or(const std::string& key,
                           const std::string& fallback) const {
  for (const auto& [k, v] : items)
    if (k == key) return v;
  return fallback;
}

void KvFile::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : items)
    if (k == key) {
      v = value;
      return;
    }
  items.emplace_back(key, value);
}

KvFile kv_parse(const std::string& text) {
  KvFile out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw io_error(io_errc::bad_value,
                     "kv: line " + std::to_string(lineno) + " lacks '='");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw io_error(io_errc::bad_value,
                     "kv: empty key on line " + std::to_string(lineno));
    out.set(key, val);
  }
  return out;
}

KvFile kv_read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error(io_errc::io_fail, "kv: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return kv_parse(ss.str());
}

void kv_write_file(const KvFile& kv, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error(io_errc::io_fail, "kv: cannot open " + path);
  for (const auto& [k, v] : kv.items) f << k << "=" << v << "\n";
  if (!f) throw io_error(io_errc::io_fail, "kv: write failed for " + path);
}

}  // namespace dpcsi
