#include "anima/diffusion.hpp"

#include <cmath>
#include <string>

#include "anima/errors.hpp"

namespace anima::inline ANIMA_NS::diffusion {

namespace {

void check_step(int t, const Schedule& s, const char* op) {
    if (t < 1 || t > s.T) {
        throw IndexError(std::string(op) + ": step " + std::to_string(t) + " outside [1, " + std::to_string(s.T) + "]");
    }
}

struct Coeffs {
    double a;  // sqrt(alpha_bar)
    double b;  // sqrt(1 - alpha_bar)
};

Coeffs coeffs(int t, const Schedule& s) {
    const double ab = s.alpha_bar_at(t);
    return {std::sqrt(ab), std::sqrt(std::max(0.0, 1.0 - ab))};
}

NdTensor combine(const NdTensor& x, double cx, const NdTensor& y, double cy) {
    if (!x.same_shape(y)) throw ShapeError("shape mismatch " + x.shape_string() + " vs " + y.shape_string());
    NdTensor out(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<Scalar>(cx * x[i] + cy * y[i]);
    return out;
}

}  // namespace

double Schedule::alpha_bar_at(int t) const {
    if (t == 0) return 1.0;
    if (t < 1 || t > T) throw IndexError("alpha_bar_at: step " + std::to_string(t) + " out of range");
    return alpha_bar[static_cast<std::size_t>(t - 1)];
}

Schedule schedule_from_betas(std::vector<double> betas) {
    if (betas.size() < 2) throw ConfigError("schedule: T must be >= 2");
    Schedule s;
    s.T = static_cast<int>(betas.size());
    double running = 1.0;
    for (double b : betas) {
        if (!(b > 0.0 && b < 1.0)) throw ConfigError("schedule: beta must lie in (0,1), got " + std::to_string(b));
        s.alpha.push_back(1.0 - b);
        running *= 1.0 - b;
        s.alpha_bar.push_back(running);
    }
    s.beta = std::move(betas);
    return s;
}

Schedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 2) throw ConfigError("schedule: T must be >= 2, got " + std::to_string(T));
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(static_cast<std::size_t>(T));
    for (int i = 0; i < T; ++i) {
        betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * i / (T - 1);
    }
    return schedule_from_betas(std::move(betas));
}

NdTensor q_sample(const NoisePair& pair, int t, const Schedule& s) {
    check_step(t, s, "q_sample");
    const auto c = coeffs(t, s);
    return combine(pair.z0, c.a, pair.eps, c.b);
}

NdTensor v_target(const NoisePair& pair, int t, const Schedule& s) {
    check_step(t, s, "v_target");
    const auto c = coeffs(t, s);
    return combine(pair.eps, c.a, pair.z0, -c.b);
}

Decomposition v_to_x0_eps(const NdTensor& zt, const NdTensor& v, int t, const Schedule& s) {
    check_step(t, s, "v_to_x0_eps");
    const auto c = coeffs(t, s);
    return {combine(zt, c.a, v, -c.b), combine(zt, c.b, v, c.a)};
}

NdTensor sampler_step(const NdTensor& zt, const NdTensor& v, int t, int t_prev, const Schedule& s) {
    if (t_prev >= t || t_prev < 0) {
        throw ContractError("sampler_step: need 0 <= t_prev < t, got t=" + std::to_string(t) +
                            " t_prev=" + std::to_string(t_prev));
    }
    auto d = v_to_x0_eps(zt, v, t, s);
    const double ab_prev = s.alpha_bar_at(t_prev);
    if (ab_prev == 1.0) return d.x0_hat;
    return combine(d.x0_hat, std::sqrt(ab_prev), d.eps_hat, std::sqrt(1.0 - ab_prev));
}

std::vector<int> sampling_steps(const Schedule& s, int count) {
    std::vector<int> steps;
    if (count <= 0 || count >= s.T) {
        for (int t = s.T; t >= 1; --t) steps.push_back(t);
        return steps;
    }
    for (int i = 0; i < count; ++i) {
        const double frac = static_cast<double>(i) / count;
        int t = static_cast<int>(std::lround(s.T - frac * s.T));
        if (!steps.empty() && t >= steps.back()) t = steps.back() - 1;
        steps.push_back(std::max(t, 1));
    }
    return steps;
}

}  // namespace anima::diffusion
