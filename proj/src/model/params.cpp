#include "anima/model/params.hpp"

#include "anima/errors.hpp"

namespace anima::inline ANIMA_NS::model {

namespace {

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }
bool contains(const std::string& s, const char* part) { return s.find(part) != std::string::npos; }

}  // namespace

ParamGroup group_of(const std::string& name) {
    if (starts_with(name, "codec.")) return ParamGroup::codec;
    if (starts_with(name, "face_encoder.")) return ParamGroup::face_encoder;
    if (starts_with(name, "audio_proj.") || contains(name, ".audio.")) return ParamGroup::audio_attention;
    if (starts_with(name, "face_proj.") || contains(name, ".face_attn.") || contains(name, ".face_norm.")) {
        return ParamGroup::face_attention;
    }
    if (contains(name, ".attn.")) return ParamGroup::full_attention;
    if (starts_with(name, "ref.")) return ParamGroup::reference_net;
    return ParamGroup::backbone;
}

const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::codec: return "codec";
        case ParamGroup::face_encoder: return "face_encoder";
        case ParamGroup::full_attention: return "full_attention";
        case ParamGroup::face_attention: return "face_attention";
        case ParamGroup::audio_attention: return "audio_attention";
        case ParamGroup::reference_net: return "reference_net";
        case ParamGroup::backbone: return "backbone";
    }
    return "?";
}

void ParamStore::set(const std::string& name, NdTensor value) {
    value.set_requires_grad(false);
    params_.insert_or_assign(name, std::move(value));
}

const NdTensor& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
}

NdTensor& ParamStore::mutable_get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, _] : params_) out.push_back(k);
    return out;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : params_) n += v.size();
    return n;
}

bool ParamStore::bit_equal(const ParamStore& other) const {
    if (params_.size() != other.params_.size()) return false;
    for (const auto& [k, v] : params_) {
        auto it = other.params_.find(k);
        if (it == other.params_.end() || !v.bit_equal(it->second)) return false;
    }
    return true;
}

Var ParamBinder::get(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return Var{&tape_, it->second};
    if (override_) {
        if (auto v = override_(name)) {
            bound_.emplace(name, v->id);
            return *v;
        }
    }
    const bool trainable = trainable_ && trainable_(name);
    Var v = tape_.leaf(store_.get(name), trainable);
    bound_.emplace(name, v.id);
    return v;
}

}  // namespace anima::model
