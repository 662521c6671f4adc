#pragma once

#include <string>
#include <vector>

#include "apex/vehicle.hpp"

namespace apex {

struct TireFitSample {
    double alpha = 0.0;   // [rad]
    double fy = 0.0;      // [N]
    double weight = 1.0;
};

struct TireFitResult {
    TireAxleParams params;
    double rmse = 0.0;           // weighted residual RMSE [N]
    bool converged = false;
    int iterations = 0;
    // fitted minus initial value for B, C, D, E, Sv, Sh
    std::array<double, 6> delta_from_init{};
};

/// Levenberg-Marquardt fit of the magic-formula macro parameters
/// (B, C, D, E, Sv, Sh) to measured lateral-force samples. The ellipse
/// shape parameter eps does not enter the pure lateral force and is kept
/// from the initial guess. Requires >= 50 samples spanning both slip signs.
TireFitResult fit_tire_params(const std::vector<TireFitSample>& samples,
                              const TireAxleParams& init);

// CSV with header alpha_rad,fy_n,weight (weight optional, default 1).
std::vector<TireFitSample> load_tire_samples_csv(const std::string& path);

void write_fit_report_json(const TireFitResult& result, const TireAxleParams& init,
                           const std::string& path);

}  // namespace apex
