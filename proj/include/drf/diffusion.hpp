#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "drf/box.hpp"

namespace drf {

// Precomputed cosine-schedule tables, indexed by timestep t in [0, T].
// alpha_bar[0] = 1 and alpha_bar is strictly decreasing.
struct NoiseSchedule {
    int T = 0;
    double s = 0.008;
    std::vector<double> beta;       // beta[0] unused, kept 0
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // f(t)/f(0)
};

struct DiffusionConfig {
    int T = 1000;
    double s = 0.008;
    double snr = 2.0;          // divisor on sampled noise
    double clamp_bound = 3.0;  // per-component clamp on sampled x_t
};

NoiseSchedule build_cosine_schedule(int T, double s);

// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps / snr,
// componentwise clamped to [-clamp_bound, clamp_bound]. 1 <= t <= T.
NormalizedResidual7 q_sample(const NormalizedResidual7& x0, int t,
                             const std::array<double, 7>& eps,
                             const NoiseSchedule& schedule, const DiffusionConfig& config);

// One reverse update from t to t_prev (0 <= t_prev < t <= T) given the
// model's clean-state estimate x0_hat. eps_new feeds the stochastic term.
NormalizedResidual7 ddim_step(const NormalizedResidual7& x_t, const NormalizedResidual7& x0_hat,
                              int t, int t_prev, const std::array<double, 7>& eps_new,
                              const NoiseSchedule& schedule);

// Count of ddim_step calls whose deterministic-noise coefficient went
// negative from rounding and was clamped to 0.
std::uint64_t ddim_clamp_count();
void reset_ddim_clamp_count();

// Reverse-order timesteps visited during sampling; the final transition
// target after the last entry is t_prev = 0.
std::vector<int> make_timestep_sequence(int T, int steps);

NormalizedResidual7 clamp_residual(const NormalizedResidual7& x, double bound);

}  // namespace drf
