#pragma once

#include "anima/scalar.hpp"

#include <vector>

#include "anima/tensor.hpp"

namespace anima::inline ANIMA_NS::diffusion {

/// Variance schedule over T steps. Step indices are 1-based; index 0 is the
/// clean endpoint with alpha_bar = 1.
struct Schedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    double alpha_bar_at(int t) const;
    double beta_start() const { return beta.front(); }
    double beta_end() const { return beta.back(); }
};

struct NoisePair {
    NdTensor z0;
    NdTensor eps;
};

/// Linear beta ramp from beta_start to beta_end; alpha_bar as running product.
Schedule make_schedule(int T, double beta_start, double beta_end);

/// Schedule built from an explicit beta sequence (same validation).
Schedule schedule_from_betas(std::vector<double> betas);

NdTensor q_sample(const NoisePair& pair, int t, const Schedule& s);
NdTensor v_target(const NoisePair& pair, int t, const Schedule& s);

struct Decomposition {
    NdTensor x0_hat;
    NdTensor eps_hat;
};

Decomposition v_to_x0_eps(const NdTensor& zt, const NdTensor& v, int t, const Schedule& s);

/// Deterministic (eta = 0) update from step t to t_prev < t. t_prev = 0 lands
/// on the clean estimate.
NdTensor sampler_step(const NdTensor& zt, const NdTensor& v, int t, int t_prev, const Schedule& s);

/// Descending step list T = t_0 > t_1 > ... > t_{k-1} >= 1 with `count`
/// entries spread evenly; count <= 0 or count >= T gives every step.
std::vector<int> sampling_steps(const Schedule& s, int count);

}  // namespace anima::diffusion
