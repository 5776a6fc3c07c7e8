#pragma once

#include "anima/scalar.hpp"

#include <cstdint>
#include <vector>

#include "anima/tensor.hpp"

namespace anima::inline ANIMA_NS::metrics {

struct GaussianStats {
    std::vector<double> mean;  // [d]
    std::vector<double> cov;   // [d x d], row-major
    std::size_t count = 0;

    std::size_t dim() const { return mean.size(); }
    double cov_at(std::size_t i, std::size_t j) const { return cov[i * dim() + j]; }
    /// Symmetric within 1e-8 and eigenvalues >= -1e-8; NumericError otherwise.
    void validate() const;
};

/// Sample mean and unbiased covariance of `features` [n x d], n >= 2.
GaussianStats fit_gaussian(const NdTensor& features);

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2).
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

struct FlowField {
    NdTensor u;  // [H x W]
    NdTensor v;  // [H x W]
};

/// Mean over fields and pixels of sqrt(u^2 + v^2).
double dynamic_degree(const std::vector<FlowField>& flows);

/// Splits [pairs x H x W x 2] into fields.
std::vector<FlowField> flows_from_tensor(const NdTensor& t);

/// Maps a batch of clips [n x ...] to features [n x d].
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual NdTensor extract(const NdTensor& clips) const = 0;
};

/// Fixed Gaussian projection of each flattened clip, scaled by 1/sqrt(in).
class RandomProjectionExtractor : public FeatureExtractor {
public:
    RandomProjectionExtractor(std::size_t out_dim, std::uint64_t seed) : out_dim_(out_dim), seed_(seed) {}
    NdTensor extract(const NdTensor& clips) const override;

private:
    std::size_t out_dim_;
    std::uint64_t seed_;
};

}  // namespace anima::metrics
