#pragma once

#include "anima/scalar.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "anima/tape.hpp"

namespace anima {

struct GradcheckOptions {
    double step = 1e-3;
    double rel_tol = 1e-3;
    /// Denominator floor for the relative error of near-zero gradients.
    double floor = 1e-2;
    double min_pass_fraction = 0.95;
    std::size_t max_coords = 64;  // per input; sampled without replacement when exceeded
    std::uint64_t seed = 1;
};

struct GradcheckReport {
    std::string name;
    std::size_t coords = 0;
    std::size_t passed = 0;
    double max_rel = 0.0;
    bool ok(double min_fraction = 0.95) const {
        return coords > 0 && static_cast<double>(passed) >= min_fraction * static_cast<double>(coords);
    }
};

/// The suite below evaluated by the double-precision build of the library,
/// where finite differences are not dominated by float32 rounding.
std::vector<GradcheckReport> gradcheck_suite_f64(std::uint64_t seed, const GradcheckOptions& opt = {});

}  // namespace anima

namespace anima::inline ANIMA_NS {

/// Scalar function of leaf variables, built on the given tape.
using ScalarFn = std::function<Var(GradTape&, const std::vector<Var>&)>;

/// Tape gradients vs central finite differences over every input.
GradcheckReport gradcheck(const std::string& name, const ScalarFn& f, const std::vector<NdTensor>& inputs,
                          const GradcheckOptions& opt = {});

/// One case per differentiable primitive plus a full DiT block.
std::vector<GradcheckReport> gradcheck_suite(std::uint64_t seed, const GradcheckOptions& opt = {});

}  // namespace anima
