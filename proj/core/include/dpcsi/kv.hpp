// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

namespace dpcsi {

// Flat text records: one `key=value` per line, `#` starts a comment,
// blank lines ignored. Keys keep first-seen order on write.
struct KvFile {
  std::vector<std::pair<std::string, std::string>> items;

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  void set(const std::string& key, const std::string& value);
};

KvFile kv_parse(const std::string& text);
KvFile kv_read_file(const std::string& path);
void kv_write_file(const KvFile& kv, const std::string& path);

}  // namespace dpcsi
