// Linear variance schedule and derived quantities. Timesteps are 1-based:
// t in [1, T]. Kept in double regardless of the pipeline scalar.
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace diffshield {

struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta[t-1]
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // prod_{i<=t} alpha_i
    std::vector<double> sigma;      // sqrt(beta)

    double beta_at(int t) const { return beta.at(static_cast<std::size_t>(check(t) - 1)); }
    double alpha_at(int t) const { return alpha.at(static_cast<std::size_t>(check(t) - 1)); }
    double alpha_bar_at(int t) const { return alpha_bar.at(static_cast<std::size_t>(check(t) - 1)); }
    double sigma_at(int t) const { return sigma.at(static_cast<std::size_t>(check(t) - 1)); }

    int check(int t) const {
        if (t < 1 || t > T) throw std::out_of_range("schedule: timestep " + std::to_string(t) + " outside [1," + std::to_string(T) + "]");
        return t;
    }
};

inline NoiseSchedule linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw std::invalid_argument("schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<std::size_t>(T));
    s.alpha.resize(static_cast<std::size_t>(T));
    s.alpha_bar.resize(static_cast<std::size_t>(T));
    s.sigma.resize(static_cast<std::size_t>(T));
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        double b = (T == 1) ? beta_start
                            : beta_start + (beta_end - beta_start) * static_cast<double>(t - 1) / static_cast<double>(T - 1);
        std::size_t i = static_cast<std::size_t>(t - 1);
        s.beta[i] = b;
        s.alpha[i] = 1.0 - b;
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
        s.sigma[i] = std::sqrt(b);
    }
    return s;
}

}  // namespace diffshield
