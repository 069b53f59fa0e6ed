// SPDX-License-Identifier: Apache-2.0
#include "dpcsi/tensor.hpp"

namespace dpcsi {

std::string shape_to_string(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace dpcsi
