#include "anima/model/codec.hpp"

#include <cmath>

#include "anima/errors.hpp"
#include "anima/rng.hpp"

namespace anima::inline ANIMA_NS::model {

const char* role_name(FrameRole r) {
    switch (r) {
        case FrameRole::content: return "content";
        case FrameRole::motion: return "motion";
        case FrameRole::padded: return "padded";
        case FrameRole::noise: return "noise";
    }
    return "?";
}

LatentClip::LatentClip(NdTensor d, FrameRole role) : data(std::move(d)) {
    if (data.rank() != 4) throw ShapeError("LatentClip needs l x H x W x C data, got " + data.shape_string());
    roles.assign(data.dim(0), role);
}

LatentClip::LatentClip(NdTensor d, std::vector<FrameRole> r) : data(std::move(d)), roles(std::move(r)) {
    if (data.rank() != 4) throw ShapeError("LatentClip needs l x H x W x C data, got " + data.shape_string());
    if (roles.size() != data.dim(0)) throw ShapeError("LatentClip role count differs from frame count");
}

LatentClip LatentClip::frame_range(std::size_t begin, std::size_t end) const {
    std::vector<FrameRole> r(roles.begin() + static_cast<std::ptrdiff_t>(begin),
                             roles.begin() + static_cast<std::ptrdiff_t>(end));
    return LatentClip(kernels::slice(data, 0, begin, end), std::move(r));
}

NdTensor random_orthonormal_rows(std::size_t n, std::size_t m, std::uint64_t seed) {
    if (n > m) throw ShapeError("orthonormal rows need n <= m");
    Rng rng(seed);
    std::vector<std::vector<double>> rows;
    while (rows.size() < n) {
        std::vector<double> v(m);
        for (auto& x : v) x = rng.normal();
        // Two Gram-Schmidt passes for numerical orthogonality.
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& r : rows) {
                double dot = 0.0;
                for (std::size_t j = 0; j < m; ++j) dot += v[j] * r[j];
                for (std::size_t j = 0; j < m; ++j) v[j] -= dot * r[j];
            }
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-6) continue;
        for (auto& x : v) x /= norm;
        rows.push_back(std::move(v));
    }
    NdTensor out({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.at(i, j) = static_cast<Scalar>(rows[i][j]);
    return out;
}

NdTensor random_orthogonal(std::size_t n, std::uint64_t seed) { return random_orthonormal_rows(n, n, seed); }

CausalCodec::CausalCodec(CodecConfig cfg) : cfg_(cfg), matrix_({1}) {
    if (cfg_.temporal_stride == 0 || cfg_.spatial_patch == 0 || cfg_.input_channels == 0) {
        throw ConfigError("codec: stride, patch and channels must be positive");
    }
    matrix_ = random_orthogonal(window_size(), cfg_.seed);
}

CausalCodec::CausalCodec(CodecConfig cfg, NdTensor matrix) : cfg_(cfg), matrix_(std::move(matrix)) {
    const auto n = window_size();
    if (matrix_.rank() != 2 || matrix_.dim(0) != n || matrix_.dim(1) != n) {
        throw ShapeError("codec matrix must be " + std::to_string(n) + "x" + std::to_string(n));
    }
}

std::size_t CausalCodec::latent_frames(std::size_t video_frames) const {
    if (video_frames == 0 || (video_frames - 1) % cfg_.temporal_stride != 0) {
        throw ShapeError("codec: video frame count " + std::to_string(video_frames) + " is not 1 + k*" +
                         std::to_string(cfg_.temporal_stride));
    }
    return 1 + (video_frames - 1) / cfg_.temporal_stride;
}

std::size_t CausalCodec::video_frames(std::size_t latent_frames) const {
    if (latent_frames == 0) throw ShapeError("codec: latent frame count must be >= 1");
    return 1 + (latent_frames - 1) * cfg_.temporal_stride;
}

std::pair<std::size_t, std::size_t> CausalCodec::window(std::size_t j) const {
    if (j == 0) return {0, 0};
    return {(j - 1) * cfg_.temporal_stride + 1, j * cfg_.temporal_stride};
}

LatentClip CausalCodec::encode(const NdTensor& video) const {
    if (video.rank() != 4) throw ShapeError("encode: video must be L x H x W x C, got " + video.shape_string());
    const std::size_t L = video.dim(0), H0 = video.dim(1), W0 = video.dim(2), C0 = video.dim(3);
    const std::size_t p = cfg_.spatial_patch, s = cfg_.temporal_stride;
    if (C0 != cfg_.input_channels) throw ShapeError("encode: channel count differs from codec config");
    if (H0 % p != 0 || W0 % p != 0) {
        throw ShapeError("encode: frame " + std::to_string(H0) + "x" + std::to_string(W0) +
                         " not divisible by spatial patch " + std::to_string(p));
    }
    const std::size_t l = latent_frames(L);
    const std::size_t H = H0 / p, W = W0 / p, n = window_size();
    NdTensor out({l, H, W, n});
    std::vector<double> in(n);
    for (std::size_t j = 0; j < l; ++j) {
        const auto [first, last] = window(j);
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                std::size_t k = 0;
                for (std::size_t ds = 0; ds < s; ++ds) {
                    // Causal front padding: frame 0 fills its whole window.
                    const std::size_t f = (j == 0) ? first : first + ds;
                    (void)last;
                    for (std::size_t dy = 0; dy < p; ++dy)
                        for (std::size_t dx = 0; dx < p; ++dx)
                            for (std::size_t c = 0; c < C0; ++c)
                                in[k++] = video[((f * H0 + y * p + dy) * W0 + x * p + dx) * C0 + c];
                }
                Scalar* dst = out.mutable_data().data() + ((j * H + y) * W + x) * n;
                for (std::size_t r = 0; r < n; ++r) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < n; ++c) acc += static_cast<double>(matrix_.at(r, c)) * in[c];
                    dst[r] = static_cast<Scalar>(acc);
                }
            }
        }
    }
    return LatentClip(std::move(out));
}

NdTensor CausalCodec::decode(const LatentClip& clip) const {
    const std::size_t n = window_size();
    if (clip.channels() != n) throw ShapeError("decode: latent channels differ from codec window size");
    const std::size_t l = clip.frames(), H = clip.height(), W = clip.width();
    const std::size_t p = cfg_.spatial_patch, s = cfg_.temporal_stride, C0 = cfg_.input_channels;
    const std::size_t L = video_frames(l), H0 = H * p, W0 = W * p;
    NdTensor out({L, H0, W0, C0});
    std::vector<double> in(n);
    for (std::size_t j = 0; j < l; ++j) {
        const auto [first, last] = window(j);
        (void)last;
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                const Scalar* src = clip.data.data().data() + ((j * H + y) * W + x) * n;
                for (std::size_t c = 0; c < n; ++c) {
                    double acc = 0.0;
                    for (std::size_t r = 0; r < n; ++r) acc += static_cast<double>(matrix_.at(r, c)) * src[r];
                    in[c] = acc;
                }
                const std::size_t per_frame = p * p * C0;
                for (std::size_t q = 0; q < per_frame; ++q) {
                    const std::size_t dy = q / (p * C0), dx = (q / C0) % p, c = q % C0;
                    if (j == 0) {
                        double avg = 0.0;
                        for (std::size_t ds = 0; ds < s; ++ds) avg += in[ds * per_frame + q];
                        out[((first * H0 + y * p + dy) * W0 + x * p + dx) * C0 + c] = static_cast<Scalar>(avg / s);
                    } else {
                        for (std::size_t ds = 0; ds < s; ++ds) {
                            out[(((first + ds) * H0 + y * p + dy) * W0 + x * p + dx) * C0 + c] =
                                static_cast<Scalar>(in[ds * per_frame + q]);
                        }
                    }
                }
            }
        }
    }
    return out;
}

LatentClip encode_latent(const CausalCodec& codec, const NdTensor& video) { return codec.encode(video); }
NdTensor decode_latent(const CausalCodec& codec, const LatentClip& clip) { return codec.decode(clip); }

}  // namespace anima::model
