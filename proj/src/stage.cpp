// SPDX-License-Identifier: Apache-2.0
#include "kopt/stage.hpp"

#include <bit>

namespace kopt {

std::string valid_stage_list() {
  std::string out;
  for (Stage s : kAllStages) {
    if (!out.empty()) out += ", ";
    out += stage_name(s);
  }
  return out;
}

int StageSet::size() const noexcept { return std::popcount(bits_); }

}  // namespace kopt
