#pragma once

#include "anima/scalar.hpp"

#include <cstdint>
#include <string>
#include <vector>

#include "anima/tensor.hpp"

namespace anima::inline ANIMA_NS::model {

enum class FrameRole { content, motion, padded, noise };

const char* role_name(FrameRole r);

/// Latent video l x H x W x C with a role label per frame.
struct LatentClip {
    NdTensor data;
    std::vector<FrameRole> roles;

    LatentClip() = default;
    explicit LatentClip(NdTensor d, FrameRole role = FrameRole::content);
    LatentClip(NdTensor d, std::vector<FrameRole> r);

    std::size_t frames() const { return data.dim(0); }
    std::size_t height() const { return data.dim(1); }
    std::size_t width() const { return data.dim(2); }
    std::size_t channels() const { return data.dim(3); }

    /// Frames [begin, end) as a new clip.
    LatentClip frame_range(std::size_t begin, std::size_t end) const;
};

struct CodecConfig {
    std::size_t temporal_stride = 2;
    std::size_t spatial_patch = 2;
    std::size_t input_channels = 1;
    std::uint64_t seed = 0;
};

/// Linear stand-in for a causal 3D VAE. Latent frame 0 sees input frame 0
/// only (replicated to fill the temporal window); latent frame j >= 1 sees
/// input frames (j-1)*s+1 .. j*s. Each window of s x p x p x C0 pixels maps
/// through one orthogonal matrix to s*p*p*C0 latent channels, so decoding is
/// the exact transpose.
class CausalCodec {
public:
    explicit CausalCodec(CodecConfig cfg);
    CausalCodec(CodecConfig cfg, NdTensor matrix);

    const CodecConfig& config() const { return cfg_; }
    const NdTensor& matrix() const { return matrix_; }

    std::size_t latent_channels() const { return window_size(); }
    std::size_t latent_frames(std::size_t video_frames) const;
    std::size_t video_frames(std::size_t latent_frames) const;

    /// First and last input frame (inclusive, 0-based) feeding latent frame j.
    std::pair<std::size_t, std::size_t> window(std::size_t latent_frame) const;

    LatentClip encode(const NdTensor& video) const;
    NdTensor decode(const LatentClip& clip) const;

private:
    std::size_t window_size() const {
        return cfg_.temporal_stride * cfg_.spatial_patch * cfg_.spatial_patch * cfg_.input_channels;
    }

    CodecConfig cfg_;
    NdTensor matrix_;  // [n x n], orthogonal
};

/// Random orthogonal n x n matrix via Gram-Schmidt on Gaussian draws.
NdTensor random_orthogonal(std::size_t n, std::uint64_t seed);

/// n x m matrix (n <= m) with orthonormal rows.
NdTensor random_orthonormal_rows(std::size_t n, std::size_t m, std::uint64_t seed);

LatentClip encode_latent(const CausalCodec& codec, const NdTensor& video);
NdTensor decode_latent(const CausalCodec& codec, const LatentClip& clip);

}  // namespace anima::model
