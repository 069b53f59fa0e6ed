// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace dpcsi {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kGeneratorVersion = "dpcsi-gen-1";

}  // namespace dpcsi
