#include "drf/diffusion.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

namespace drf {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::atomic<std::uint64_t> g_ddim_clamp_count{0};

double cosine_f(int t, int T, double s) {
    const double u = ((static_cast<double>(t) / T) + s) / (1.0 + s);
    const double c = std::cos(u * kPi / 2.0);
    return c * c;
}

}  // namespace

NoiseSchedule build_cosine_schedule(int T, double s) {
    if (T < 1) throw std::invalid_argument("build_cosine_schedule: T >= 1 required");
    if (!(s > 0.0)) throw std::invalid_argument("build_cosine_schedule: s > 0 required");
    NoiseSchedule sch;
    sch.T = T;
    sch.s = s;
    sch.beta.assign(T + 1, 0.0);
    sch.alpha.assign(T + 1, 1.0);
    sch.alpha_bar.assign(T + 1, 1.0);
    const double f0 = cosine_f(0, T, s);
    for (int t = 0; t <= T; ++t) {
        sch.alpha_bar[t] = cosine_f(t, T, s) / f0;
    }
    for (int t = 1; t <= T; ++t) {
        const double b = 1.0 - sch.alpha_bar[t] / sch.alpha_bar[t - 1];
        sch.beta[t] = std::min(b, 0.999);
        sch.alpha[t] = 1.0 - sch.beta[t];
    }
    return sch;
}

NormalizedResidual7 clamp_residual(const NormalizedResidual7& x, double bound) {
    auto a = x.to_array();
    for (double& v : a) v = std::clamp(v, -bound, bound);
    return NormalizedResidual7::from_array(a);
}

NormalizedResidual7 q_sample(const NormalizedResidual7& x0, int t,
                             const std::array<double, 7>& eps,
                             const NoiseSchedule& schedule, const DiffusionConfig& config) {
    if (t < 1 || t > schedule.T) throw std::out_of_range("q_sample: t out of range");
    const double ab = schedule.alpha_bar[t];
    const double sig = std::sqrt(ab);
    const double noi = std::sqrt(1.0 - ab) / config.snr;
    auto x = x0.to_array();
    for (int i = 0; i < 7; ++i) {
        x[i] = sig * x[i] + noi * eps[i];
    }
    return clamp_residual(NormalizedResidual7::from_array(x), config.clamp_bound);
}

NormalizedResidual7 ddim_step(const NormalizedResidual7& x_t, const NormalizedResidual7& x0_hat,
                              int t, int t_prev, const std::array<double, 7>& eps_new,
                              const NoiseSchedule& schedule) {
    if (t_prev < 0 || t_prev >= t || t > schedule.T) {
        throw std::out_of_range("ddim_step: need 0 <= t_prev < t <= T");
    }
    const double ab = schedule.alpha_bar[t];
    const double ab_prev = schedule.alpha_bar[t_prev];
    const double sigma =
        std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
    double dir_coeff_sq = 1.0 - ab_prev - sigma * sigma;
    if (dir_coeff_sq < 0.0) {
        dir_coeff_sq = 0.0;
        g_ddim_clamp_count.fetch_add(1, std::memory_order_relaxed);
    }
    const double dir_coeff = std::sqrt(dir_coeff_sq);
    const double sqrt_ab = std::sqrt(ab);
    const double sqrt_ab_prev = std::sqrt(ab_prev);
    const double inv_noise = 1.0 / std::sqrt(1.0 - ab);

    const auto xt = x_t.to_array();
    const auto x0 = x0_hat.to_array();
    std::array<double, 7> out{};
    for (int i = 0; i < 7; ++i) {
        const double eps_t = (xt[i] - sqrt_ab * x0[i]) * inv_noise;
        out[i] = sqrt_ab_prev * x0[i] + dir_coeff * eps_t + sigma * eps_new[i];
    }
    return NormalizedResidual7::from_array(out);
}

std::uint64_t ddim_clamp_count() { return g_ddim_clamp_count.load(std::memory_order_relaxed); }

void reset_ddim_clamp_count() { g_ddim_clamp_count.store(0, std::memory_order_relaxed); }

std::vector<int> make_timestep_sequence(int T, int steps) {
    if (steps < 1 || steps > T) {
        throw std::invalid_argument("make_timestep_sequence: need 1 <= steps <= T");
    }
    if (steps == 3 && T == 1000) return {1000, 500, 200};
    std::vector<int> ts(steps);
    for (int k = 0; k < steps; ++k) {
        ts[k] = static_cast<int>(
            std::llround(static_cast<double>(T) * (1.0 - static_cast<double>(k) / steps)));
    }
    return ts;
}

}  // namespace drf
