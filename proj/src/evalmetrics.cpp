#include "anima/evalmetrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "anima/errors.hpp"
#include "anima/rng.hpp"

namespace anima::inline ANIMA_NS::metrics {

namespace {

constexpr double kEigTol = 1e-8;

using Mat = Eigen::MatrixXd;

Mat to_matrix(const GaussianStats& g) {
    const auto d = static_cast<Eigen::Index>(g.dim());
    Mat m(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) m(i, j) = g.cov_at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    return m;
}

// Negative eigenvalues down to -tol * max(1, |largest|) are rounding and clamp to 0.
Eigen::VectorXd clamped_eigenvalues(const Eigen::VectorXd& ev, const char* what, bool relative = false) {
    Eigen::VectorXd out = ev;
    const double tol = relative ? kEigTol * std::max(1.0, ev.cwiseAbs().maxCoeff()) : kEigTol;
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        if (out(i) < -tol) throw NumericError(std::string(what) + " is not positive semidefinite");
        out(i) = std::max(out(i), 0.0);
    }
    return out;
}

}  // namespace

void GaussianStats::validate() const {
    const std::size_t d = dim();
    if (d == 0) throw ContractError("gaussian stats: empty mean");
    if (cov.size() != d * d) throw ShapeError("gaussian stats: covariance must be d x d");
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (std::abs(cov_at(i, j) - cov_at(j, i)) > kEigTol) throw NumericError("covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(to_matrix(*this), Eigen::EigenvaluesOnly);
    clamped_eigenvalues(es.eigenvalues(), "covariance");
}

GaussianStats fit_gaussian(const NdTensor& features) {
    if (features.rank() != 2) throw ShapeError("fit_gaussian: features must be [n x d], got " + features.shape_string());
    const std::size_t n = features.dim(0), d = features.dim(1);
    if (n < 2) throw ContractError("fit_gaussian: need at least 2 samples");
    GaussianStats g;
    g.count = n;
    g.mean.assign(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) g.mean[c] += features.at(r, c);
    for (auto& m : g.mean) m /= static_cast<double>(n);
    g.cov.assign(d * d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i) {
            const double di = features.at(r, i) - g.mean[i];
            for (std::size_t j = i; j < d; ++j) g.cov[i * d + j] += di * (features.at(r, j) - g.mean[j]);
        }
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
            g.cov[i * d + j] /= static_cast<double>(n - 1);
            g.cov[j * d + i] = g.cov[i * d + j];
        }
    return g;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (a.dim() != b.dim()) throw ShapeError("frechet_distance: dimension mismatch");
    a.validate();
    b.validate();
    const std::size_t d = a.dim();
    double mean_term = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);

    const Mat sa = to_matrix(a), sb = to_matrix(b);
    Eigen::SelfAdjointEigenSolver<Mat> ea(sa);
    const Eigen::VectorXd la = clamped_eigenvalues(ea.eigenvalues(), "covariance");
    const Mat root_a = ea.eigenvectors() * la.cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
    Mat inner = root_a * sb * root_a;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> ei(inner, Eigen::EigenvaluesOnly);
    Eigen::VectorXd li = clamped_eigenvalues(ei.eigenvalues(), "covariance product", true);
    // Eigenvalues at rounding level would otherwise contribute ~sqrt(eps).
    const double floor = static_cast<double>(d) * std::numeric_limits<double>::epsilon() * std::max(1.0, li.maxCoeff());
    for (Eigen::Index i = 0; i < li.size(); ++i)
        if (li(i) < floor) li(i) = 0.0;
    const double trace_root = li.cwiseSqrt().sum();
    const double fd = mean_term + sa.trace() + sb.trace() - 2.0 * trace_root;
    if (!std::isfinite(fd)) throw NumericError("frechet_distance: non-finite result");
    return std::max(fd, 0.0);
}

double dynamic_degree(const std::vector<FlowField>& flows) {
    if (flows.empty()) throw ContractError("dynamic_degree: no flow fields");
    double acc = 0.0;
    std::size_t count = 0;
    for (const auto& f : flows) {
        if (!f.u.same_shape(f.v)) throw ShapeError("dynamic_degree: u and v differ in shape");
        for (std::size_t i = 0; i < f.u.size(); ++i) {
            const double u = f.u[i], v = f.v[i];
            acc += std::sqrt(u * u + v * v);
        }
        count += f.u.size();
    }
    return acc / static_cast<double>(count);
}

std::vector<FlowField> flows_from_tensor(const NdTensor& t) {
    if (t.rank() != 4 || t.dim(3) != 2) throw ShapeError("flows must be [pairs x H x W x 2], got " + t.shape_string());
    const std::size_t P = t.dim(0), H = t.dim(1), W = t.dim(2);
    std::vector<FlowField> out;
    for (std::size_t p = 0; p < P; ++p) {
        FlowField f{NdTensor({H, W}), NdTensor({H, W})};
        for (std::size_t i = 0; i < H * W; ++i) {
            f.u[i] = t[(p * H * W + i) * 2];
            f.v[i] = t[(p * H * W + i) * 2 + 1];
        }
        out.push_back(std::move(f));
    }
    return out;
}

NdTensor RandomProjectionExtractor::extract(const NdTensor& clips) const {
    if (clips.rank() < 2) throw ShapeError("feature extractor: expected a batch [n x ...]");
    const std::size_t n = clips.dim(0), in = clips.size() / n;
    Rng rng = Rng(seed_).split("projection");
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> proj(in * out_dim_);
    for (auto& p : proj) p = rng.normal() * scale;
    NdTensor out({n, out_dim_});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < out_dim_; ++o) {
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += clips[r * in + i] * proj[i * out_dim_ + o];
            out.at(r, o) = static_cast<Scalar>(acc);
        }
    return out;
}

}  // namespace anima::metrics
