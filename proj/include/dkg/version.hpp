// SPDX-License-Identifier: Apache-2.0
#ifndef DKG_VERSION_HPP
#define DKG_VERSION_HPP

#include <string_view>

namespace dkg {

inline constexpr std::string_view kToolName = "dkg";
inline constexpr std::string_view kToolVersion = "0.1.0";

}  // namespace dkg

#endif  // DKG_VERSION_HPP
