#include "anima/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "anima/errors.hpp"
#include "anima/model/dit.hpp"
#include "anima/rng.hpp"

namespace anima::inline ANIMA_NS {

namespace {

double evaluate(const ScalarFn& f, const std::vector<NdTensor>& inputs) {
    GradTape tape;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(tape.constant(x));
    return static_cast<double>(f(tape, vars).value().item());
}

}  // namespace

GradcheckReport gradcheck(const std::string& name, const ScalarFn& f, const std::vector<NdTensor>& inputs,
                          const GradcheckOptions& opt) {
    GradcheckReport rep;
    rep.name = name;
    GradTape tape;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(tape.leaf(x, true));
    Var loss = f(tape, vars);
    Gradients grads = tape.backward(loss);

    Rng rng = Rng(opt.seed).split(name);
    std::vector<NdTensor> probe = inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        std::vector<std::size_t> idx(inputs[k].size());
        std::iota(idx.begin(), idx.end(), 0);
        if (idx.size() > opt.max_coords) {
            for (std::size_t i = 0; i < opt.max_coords; ++i) {
                std::swap(idx[i], idx[static_cast<std::size_t>(
                                      rng.uniform_int(static_cast<std::int64_t>(i),
                                                      static_cast<std::int64_t>(idx.size() - 1)))]);
            }
            idx.resize(opt.max_coords);
        }
        auto it = grads.find(vars[k].id);
        for (std::size_t i : idx) {
            const double analytic = it == grads.end() ? 0.0 : it->second[i];
            const Scalar orig = probe[k][i];
            const Scalar hi = static_cast<Scalar>(orig + opt.step);
            const Scalar lo = static_cast<Scalar>(orig - opt.step);
            probe[k][i] = hi;
            const double up = evaluate(f, probe);
            probe[k][i] = lo;
            const double down = evaluate(f, probe);
            probe[k][i] = orig;
            // Divide by the step actually taken after rounding to Scalar.
            const double numeric = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), opt.floor});
            rep.max_rel = std::max(rep.max_rel, rel);
            ++rep.coords;
            if (rel <= opt.rel_tol) ++rep.passed;
        }
    }
    return rep;
}

std::vector<GradcheckReport> gradcheck_suite(std::uint64_t seed, const GradcheckOptions& opt) {
    Rng rng(seed);
    auto rnd = [&](NdTensor::Dims d) { return NdTensor::randn(std::move(d), rng); };
    auto scale_init = [](NdTensor x) { return kernels::scale(x, 0.5f); };
    // Fixed random weightings turn tensor-valued ops into scalars without
    // making the reduction itself symmetric.
    auto weigh = [](GradTape& t, Var y, Rng& r) {
        return sum(y * t.constant(NdTensor::randn(y.dims(), r)));
    };
    std::vector<GradcheckReport> out;
    auto run = [&](const std::string& name, std::vector<NdTensor> inputs, auto body) {
        Rng w = Rng(seed).split("weights").split(name);
        ScalarFn f = [body, w](GradTape& t, const std::vector<Var>& v) {
            Rng r = w;
            return body(t, v, r);
        };
        out.push_back(gradcheck(name, f, inputs, opt));
    };
    auto* weigh_ptr = &weigh;
    auto wrap = [weigh_ptr](auto op) {
        return [op, weigh_ptr](GradTape& t, const std::vector<Var>& v, Rng& r) { return (*weigh_ptr)(t, op(t, v), r); };
    };

    run("matmul", {rnd({3, 4}), rnd({4, 5})}, wrap([](GradTape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); }));
    run("add", {rnd({3, 4}), rnd({3, 4})}, wrap([](GradTape&, const std::vector<Var>& v) { return add(v[0], v[1]); }));
    run("mul", {rnd({3, 4}), rnd({3, 4})}, wrap([](GradTape&, const std::vector<Var>& v) { return mul(v[0], v[1]); }));
    run("scale", {rnd({3, 4})}, wrap([](GradTape&, const std::vector<Var>& v) { return scale(v[0], -1.7f); }));
    run("concat", {rnd({2, 3}), rnd({2, 2})},
        wrap([](GradTape&, const std::vector<Var>& v) { return concat({v[0], v[1]}, 1); }));
    run("slice", {rnd({4, 5})}, wrap([](GradTape&, const std::vector<Var>& v) { return slice(v[0], 1, 1, 4); }));
    run("pad", {rnd({2, 3})}, wrap([](GradTape&, const std::vector<Var>& v) { return pad(v[0], 0, 1, 2); }));
    run("transpose", {rnd({3, 4})}, wrap([](GradTape&, const std::vector<Var>& v) { return transpose(v[0]); }));
    run("softmax_rows", {rnd({3, 5})}, wrap([](GradTape&, const std::vector<Var>& v) { return softmax_rows(v[0]); }));
    run("layer_norm", {rnd({3, 6}), rnd({6}), rnd({6})},
        wrap([](GradTape&, const std::vector<Var>& v) { return layer_norm(v[0], v[1], v[2], 1e-5f); }));
    run("gelu", {rnd({3, 4})}, wrap([](GradTape&, const std::vector<Var>& v) { return gelu(v[0]); }));
    run("mean", {rnd({3, 4})}, [](GradTape& t, const std::vector<Var>& v, Rng&) {
        return mean(v[0] * v[0] + t.constant(NdTensor({3, 4}, 0.5f)) * v[0]);
    });
    run("sum", {rnd({3, 4})}, [](GradTape&, const std::vector<Var>& v, Rng&) { return sum(v[0] * v[0]); });
    run("mse", {rnd({3, 4}), rnd({3, 4})}, [](GradTape&, const std::vector<Var>& v, Rng&) { return mse(v[0], v[1]); });
    run("mlp3", {rnd({4, 6}), scale_init(rnd({6, 8})), rnd({1, 8}), scale_init(rnd({8, 8})), scale_init(rnd({8, 3}))},
        [](GradTape& t, const std::vector<Var>& v, Rng& r) {
            Var h = gelu(matmul(v[0], v[1]) + matmul(t.constant(NdTensor::ones({4, 1})), v[2]));
            h = gelu(matmul(h, v[3]));
            Var y = matmul(h, v[4]);
            return mse(y, t.constant(NdTensor::randn({4, 3}, r)));
        });

    // One DiT block end to end, with nonzero modulation so every path is live.
    {
        model::DitConfig cfg;
        cfg.depth = 1;
        cfg.model_dim = 16;
        cfg.heads = 2;
        cfg.latent_frames = 2;
        cfg.latent_height = 2;
        cfg.latent_width = 4;
        cfg.text_tokens = 2;
        cfg.text_dim = 4;
        cfg.face_dim = 4;
        cfg.audio_layer_dim = 1;
        cfg.identity_mode = cond::IdentityMode::face_attention_plus_ref_net;
        auto m = model::DitModel::init(cfg, seed);
        Rng pr = Rng(seed).split("block");
        for (const auto& name : m.params().names()) {
            auto& p = m.params().mutable_get(name);
            const bool zero = std::all_of(p.data().begin(), p.data().end(), [](Scalar x) { return x == 0.0f; });
            if (zero) p = NdTensor::randn(p.dims(), pr, 0.2);
        }
        const std::size_t C = cfg.latent_channels();
        NdTensor noisy = NdTensor::randn({cfg.latent_frames, cfg.latent_height, cfg.latent_width, C}, pr);
        NdTensor ref = NdTensor::randn({1, cfg.latent_height, cfg.latent_width, C}, pr);
        NdTensor face = NdTensor::randn({1, cfg.face_dim}, pr);
        NdTensor text = NdTensor::randn({cfg.text_tokens, cfg.text_dim}, pr);
        NdTensor audio = NdTensor::randn({cfg.audio_tokens(), cfg.audio_dim()}, pr);
        NdTensor target = NdTensor::randn({cfg.tokens(), cfg.patch_out()}, pr);

        std::vector<std::string> names = m.params().names();
        std::vector<std::string> probed;
        std::vector<NdTensor> inputs;
        for (const auto& n : names) {
            if (model::group_of(n) == model::ParamGroup::codec || n == "face_encoder.w") continue;
            probed.push_back(n);
            inputs.push_back(m.params().get(n));
        }
        GradcheckOptions o = opt;
        o.max_coords = std::max<std::size_t>(2, opt.max_coords / 16);
        ScalarFn f = [m, probed, noisy, ref, face, text, audio, target](GradTape& t, const std::vector<Var>& v) {
            const model::ParamStore& store = m.params();
            // Values come from the probe; the binder then maps names to these leaves.
            std::map<std::string, Var> bound;
            for (std::size_t i = 0; i < probed.size(); ++i) bound.emplace(probed[i], v[i]);
            model::ParamBinder p(t, store, {}, [bound](const std::string& n) -> std::optional<Var> {
                auto it = bound.find(n);
                if (it == bound.end()) return std::nullopt;
                return it->second;
            });
            model::IdentityInput id{&ref, &face, nullptr};
            model::DenoiserInputs in;
            in.noisy = &noisy;
            in.t = 7;
            in.T = 50;
            in.text = &text;
            in.audio = &audio;
            in.identity = &id;
            return mse(m.forward(p, in), t.constant(target));
        };
        out.push_back(gradcheck("dit_block", f, inputs, o));
    }
    return out;
}

}  // namespace anima

#ifdef ANIMA_F64
std::vector<anima::GradcheckReport> anima::gradcheck_suite_f64(std::uint64_t seed, const GradcheckOptions& opt) {
    return anima::f64::gradcheck_suite(seed, opt);
}
#endif
