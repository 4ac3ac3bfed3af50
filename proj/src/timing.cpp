// SPDX-License-Identifier: Apache-2.0
#include "ccmlab/timing.hpp"

#include <cmath>

#include "ccmlab/errors.hpp"

namespace ccm {

void FrameTiming::validate() const {
    if (!(t_c > 0.0) || !(t_o > 0.0) || !(t_co > 0.0) || n_cct < 1) {
        throw ConfigError("frame timing fields must be positive");
    }
    if (t_o + n_cct * t_c > t_co * (1.0 + 1e-12)) {
        throw ConfigError("t_o + n_cct * t_c exceeds the COCT length");
    }
}

} // namespace ccm
