#pragma once

#include <cmath>

#include "eabcal/error.hpp"

namespace eabcal {

// Newell's shift: response time tau (s) and minimum spacing delta (m). The
// congestion wave speed is derived, never stored, so w == -delta/tau exactly.
struct NewellParams {
    double tau = 1.0;
    double delta = 6.0;

    double w() const { return -delta / tau; }

    void validate() const {
        if (!(tau > 0.0) || !(delta > 0.0) || !std::isfinite(tau) || !std::isfinite(delta))
            throw InputError("Newell parameters require tau > 0 and delta > 0");
    }
};

}  // namespace eabcal
