#pragma once

#include "anima/scalar.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anima/tape.hpp"
#include "anima/tensor.hpp"

namespace anima::inline ANIMA_NS::model {

/// Parameter groups used by the training freeze rules.
enum class ParamGroup {
    codec,           // causal latent codec (never trained)
    face_encoder,    // face-embedding stand-in (never trained)
    full_attention,  // 3D full attention of the denoiser and the reference net
    face_attention,  // face cross-attention / face adaptive norm / face projection
    audio_attention, // audio projection and audio injection sublayers
    reference_net,   // non-attention parts of the reference net
    backbone,        // everything else in the denoiser
};

ParamGroup group_of(const std::string& name);
const char* group_name(ParamGroup g);

/// Named parameter tensors, iterated in name order.
class ParamStore {
public:
    void set(const std::string& name, NdTensor value);
    const NdTensor& get(const std::string& name) const;
    NdTensor& mutable_get(const std::string& name);
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    const std::map<std::string, NdTensor>& all() const { return params_; }
    std::vector<std::string> names() const;
    std::size_t scalar_count() const;

    /// Bitwise equality of every parameter.
    bool bit_equal(const ParamStore& other) const;

private:
    std::map<std::string, NdTensor> params_;
};

/// Registers parameters on a tape on first use. Trainable parameters become
/// gradient leaves; the rest are constants.
class ParamBinder {
public:
    using TrainablePredicate = std::function<bool(const std::string&)>;
    /// Supplies an existing tape node for a name instead of a fresh leaf.
    using Override = std::function<std::optional<Var>(const std::string&)>;

    ParamBinder(GradTape& tape, const ParamStore& store, TrainablePredicate trainable = {}, Override override = {})
        : tape_(tape), store_(store), trainable_(std::move(trainable)), override_(std::move(override)) {}

    Var get(const std::string& name);
    bool has(const std::string& name) const { return store_.contains(name); }
    GradTape& tape() { return tape_; }
    Var constant(NdTensor value) { return tape_.constant(std::move(value)); }

    /// Parameter name -> tape id for every bound parameter.
    const std::map<std::string, int>& bound() const { return bound_; }

private:
    GradTape& tape_;
    const ParamStore& store_;
    TrainablePredicate trainable_;
    Override override_;
    std::map<std::string, int> bound_;
};

}  // namespace anima::model
