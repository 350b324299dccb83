// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fuselora/adapters.hpp"
#include "fuselora/dispatch.hpp"
#include "fuselora/elementwise.hpp"
#include "fuselora/error.hpp"
#include "fuselora/gemm.hpp"
#include "fuselora/matrix.hpp"
#include "fuselora/rng.hpp"
#include "fuselora/routing.hpp"
#include "fuselora/sgmm.hpp"

namespace fuselora {

enum class Strategy {
    Base,                 // backbone only, no adapters
    LayerWiseRouted,      // a router and k expert evaluations at every layer
    PreGatedNaive,        // one gate per token, experts evaluated next to the backbone
    PreGatedSimpleMerge,  // one gate per token, merged into the backbone one layer at a time
    PreGatedFused,        // one gate per token, all layers switched by a single SGMM
};

inline constexpr std::array<Strategy, 5> kAllStrategies = {
    Strategy::Base, Strategy::LayerWiseRouted, Strategy::PreGatedNaive,
    Strategy::PreGatedSimpleMerge, Strategy::PreGatedFused};

inline std::string_view to_string(Strategy s) {
    switch (s) {
    case Strategy::Base:
        return "base";
    case Strategy::LayerWiseRouted:
        return "layerwise_routed";
    case Strategy::PreGatedNaive:
        return "pregated_naive";
    case Strategy::PreGatedSimpleMerge:
        return "pregated_simple_merge";
    case Strategy::PreGatedFused:
        return "pregated_fused";
    }
    return "unknown";
}

inline Strategy parse_strategy(std::string_view name) {
    for (Strategy s : kAllStrategies) {
        if (to_string(s) == name) {
            return s;
        }
    }
    throw ParameterError("unknown strategy '" + std::string(name) + "'");
}

inline bool is_pregated(Strategy s) noexcept {
    return s == Strategy::PreGatedNaive || s == Strategy::PreGatedSimpleMerge ||
           s == Strategy::PreGatedFused;
}

inline bool merges_into_backbone(Strategy s) noexcept {
    return s == Strategy::PreGatedSimpleMerge || s == Strategy::PreGatedFused;
}

/// Component labels attached to dispatches.
namespace labels {
inline constexpr std::string_view kBackbone = "backbone";
inline constexpr std::string_view kRouter = "router";
inline constexpr std::string_view kAdapter = "adapter";
inline constexpr std::string_view kSwitch = "switch";
inline constexpr std::string_view kOther = "other";
inline constexpr std::array<std::string_view, 5> kAll = {kAdapter, kBackbone, kOther, kRouter,
                                                         kSwitch};
}  // namespace labels

struct ModelConfig {
    std::size_t layers = 8;
    std::size_t hidden = 64;
    std::size_t vocab = 256;
    std::size_t experts = 8;
    std::size_t rank = 4;
    std::size_t top_k = 2;
    Precision precision = Precision::Double;
    std::uint64_t seed = 42;
    Strategy strategy = Strategy::PreGatedFused;
    TileConfig tile{};
    /// Re-fuse from the pristine backbone every this many fused decode steps; 0 disables.
    std::size_t refresh_interval = 0;

    void validate() const {
        if (layers < 1) {
            throw ParameterError("layers must be >= 1");
        }
        if (hidden < 1) {
            throw ParameterError("hidden must be >= 1");
        }
        if (vocab < 2) {
            throw ParameterError("vocab must be >= 2");
        }
        if (rank < 1) {
            throw ParameterError("rank must be >= 1");
        }
        if (top_k < 1 || top_k > experts) {
            throw ParameterError("need experts >= top_k >= 1 (experts=" + std::to_string(experts) +
                                 ", top_k=" + std::to_string(top_k) + ")");
        }
        tile.validate();
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Backbone currently carries these per-layer deltas (empty when pristine).
template <Real T>
struct FusionRecord {
    std::vector<ConcatAdapter<T>> applied;
    std::size_t steps_since_refresh = 0;

    bool active() const noexcept { return !applied.empty(); }
};

// Embedding -> L x (adapted d x d linear, GELU, residual) -> unembedding.
//
// Strategies that merge adapters mutate backbone(); pristine() keeps the
// initial weights so restoration and drift can be checked.
template <Real T>
class DecoderModel {
public:
    DecoderModel(ModelConfig config, Matrix<T> embed, std::vector<Matrix<T>> backbone,
                 ExpertBank<T> bank, RouterParams<T> router,
                 std::vector<RouterParams<T>> layer_routers, Matrix<T> unembed)
        : config_(std::move(config)),
          embed_(std::move(embed)),
          backbone_(std::move(backbone)),
          pristine_(backbone_),
          bank_(std::move(bank)),
          router_(std::move(router)),
          layer_routers_(std::move(layer_routers)),
          unembed_(std::move(unembed)) {
        validate();
    }

    const ModelConfig& config() const noexcept { return config_; }
    const Matrix<T>& embed() const noexcept { return embed_; }
    std::vector<Matrix<T>>& backbone() noexcept { return backbone_; }
    const std::vector<Matrix<T>>& backbone() const noexcept { return backbone_; }
    const std::vector<Matrix<T>>& pristine() const noexcept { return pristine_; }
    const ExpertBank<T>& bank() const noexcept { return bank_; }
    const RouterParams<T>& router() const noexcept { return router_; }
    /// Per-layer routers used by LayerWiseRouted; entry 0 is router().
    const std::vector<RouterParams<T>>& layer_routers() const noexcept { return layer_routers_; }
    const Matrix<T>& unembed() const noexcept { return unembed_; }

    FusionRecord<T>& fusion() noexcept { return fusion_; }
    const FusionRecord<T>& fusion() const noexcept { return fusion_; }

    void set_strategy(Strategy s) {
        if (fusion_.active()) {
            throw StateError("cannot change strategy while adapters are merged");
        }
        config_.strategy = s;
    }

    /// Largest |backbone - pristine| over all layers.
    double backbone_deviation() const {
        double worst = 0.0;
        for (std::size_t l = 0; l < backbone_.size(); ++l) {
            worst = std::max(worst, max_abs_diff(backbone_[l], pristine_[l]));
        }
        return worst;
    }

    /// Host-side copy of the pristine weights into the backbone; no dispatch.
    void restore_pristine() {
        backbone_ = pristine_;
        fusion_ = {};
    }

private:
    void validate() const {
        config_.validate();
        const std::size_t d = config_.hidden;
        if (embed_.rows() != config_.vocab || embed_.cols() != d) {
            throw DimensionError("embedding shape " + shape_string(embed_));
        }
        if (unembed_.rows() != d || unembed_.cols() != config_.vocab) {
            throw DimensionError("unembedding shape " + shape_string(unembed_));
        }
        if (backbone_.size() != config_.layers) {
            throw DimensionError("backbone layer count mismatch");
        }
        for (const Matrix<T>& f : backbone_) {
            if (f.rows() != d || f.cols() != d) {
                throw DimensionError("backbone layer shape " + shape_string(f));
            }
        }
        bank_.validate(backbone_);
        if (bank_.num_experts() != config_.experts || bank_.rank() != config_.rank) {
            throw DimensionError("expert bank does not match config");
        }
        if (router_.num_experts() != config_.experts || router_.width() != d) {
            throw DimensionError("router shape " + shape_string(router_.w_g));
        }
        if (layer_routers_.size() != config_.layers) {
            throw DimensionError("need one layer router per layer");
        }
        for (const RouterParams<T>& r : layer_routers_) {
            if (r.num_experts() != config_.experts || r.width() != d) {
                throw DimensionError("layer router shape " + shape_string(r.w_g));
            }
        }
    }

    ModelConfig config_;
    Matrix<T> embed_;
    std::vector<Matrix<T>> backbone_;
    std::vector<Matrix<T>> pristine_;
    ExpertBank<T> bank_;
    RouterParams<T> router_;
    std::vector<RouterParams<T>> layer_routers_;
    Matrix<T> unembed_;
    FusionRecord<T> fusion_;
};

namespace detail {

inline Matrix<double> random_matrix(Rng& rng, std::size_t rows, std::size_t cols,
                                    std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> data(rows * cols);
    for (double& v : data) {
        v = rng.uniform(-bound, bound);
    }
    return Matrix<double>(rows, cols, std::move(data));
}

}  // namespace detail

// Deterministic initialization. Every entry is uniform in
// [-1/sqrt(fan_in), 1/sqrt(fan_in)) from mt19937_64(seed), drawn in this order:
//   embedding (vocab x d, fan_in d), backbone f^0..f^{L-1} (d x d, fan_in d),
//   experts layer-major then expert-major with down (r x d, fan_in d) before
//   up (d x r, fan_in r), the pre-gate router (N x d, fan_in d), layer routers
//   1..L-1 (layer 0 reuses the pre-gate router), unembedding (d x vocab, fan_in d).
// Values are drawn in double and rounded once for single precision.
template <Real T>
DecoderModel<T> build_model(const ModelConfig& config) {
    config.validate();
    if (config.precision != precision_of<T>()) {
        throw ParameterError("config precision is " + std::string(to_string(config.precision)) +
                             " but the model was instantiated for " +
                             std::string(to_string(precision_of<T>())));
    }
    const std::size_t d = config.hidden;
    Rng rng(config.seed);

    auto draw = [&](std::size_t rows, std::size_t cols, std::size_t fan_in) {
        return detail::random_matrix(rng, rows, cols, fan_in).template cast<T>();
    };

    Matrix<T> embed = draw(config.vocab, d, d);
    std::vector<Matrix<T>> backbone;
    for (std::size_t l = 0; l < config.layers; ++l) {
        backbone.push_back(draw(d, d, d));
    }
    ExpertBank<T> bank;
    bank.layers.resize(config.layers);
    for (std::size_t l = 0; l < config.layers; ++l) {
        for (std::size_t e = 0; e < config.experts; ++e) {
            Matrix<T> down = draw(config.rank, d, d);
            Matrix<T> up = draw(d, config.rank, config.rank);
            bank.layers[l].push_back(LoraExpert<T>{std::move(down), std::move(up)});
        }
    }
    RouterParams<T> router{draw(config.experts, d, d)};
    std::vector<RouterParams<T>> layer_routers{router};
    for (std::size_t l = 1; l < config.layers; ++l) {
        layer_routers.push_back(RouterParams<T>{draw(config.experts, d, d)});
    }
    Matrix<T> unembed = draw(d, config.vocab, d);
    return DecoderModel<T>(config, std::move(embed), std::move(backbone), std::move(bank),
                           std::move(router), std::move(layer_routers), std::move(unembed));
}

/// FNV-1a over the IEEE bytes of every weight, in initialization order.
template <Real T>
std::uint64_t weights_fingerprint(const DecoderModel<T>& model) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](const Matrix<T>& m) {
        for (T v : m.values()) {
            const auto* bytes = reinterpret_cast<const unsigned char*>(&v);
            for (std::size_t i = 0; i < sizeof(T); ++i) {
                h ^= bytes[i];
                h *= 0x100000001b3ULL;
            }
        }
    };
    mix(model.embed());
    for (const Matrix<T>& f : model.pristine()) {
        mix(f);
    }
    for (const auto& layer : model.bank().layers) {
        for (const LoraExpert<T>& e : layer) {
            mix(e.down);
            mix(e.up);
        }
    }
    mix(model.router().w_g);
    for (std::size_t l = 1; l < model.layer_routers().size(); ++l) {
        mix(model.layer_routers()[l].w_g);
    }
    mix(model.unembed());
    return h;
}

/// Hidden state entering the first layer for a token; host-side row copy.
template <Real T>
Matrix<T> embed_token(const DecoderModel<T>& model, std::size_t token) {
    if (token >= model.config().vocab) {
        throw InputError("token " + std::to_string(token) + " outside vocabulary of " +
                         std::to_string(model.config().vocab));
    }
    const auto row = model.embed().row(token);
    return Matrix<T>::column(std::vector<T>(row.begin(), row.end()));
}

// One layer: x + GELU(y), where y is the backbone output plus whatever adapter
// terms the strategy evaluates outside the backbone. Merge-based strategies
// expect the adapters to already be in backbone()[layer].
//
// Dispatches: backbone gemm, then router gemm + softmax (LayerWiseRouted only),
// 2 gemm per selected expert (LayerWiseRouted, PreGatedNaive), and one
// elementwise epilogue that sums the adapter terms and applies GELU + residual.
template <Real T>
Matrix<T> forward_layer(std::size_t layer, const Matrix<T>& x, const GateDecision* gate,
                        Strategy strategy, const DecoderModel<T>& model,
                        DispatchRecorder& recorder) {
    const ModelConfig& cfg = model.config();
    if (layer >= cfg.layers) {
        throw IndexError("layer " + std::to_string(layer) + " out of range");
    }
    if (x.rows() != cfg.hidden || x.cols() != 1) {
        throw DimensionError("layer input " + shape_string(x) + ", expected " +
                             shape_string(cfg.hidden, 1));
    }
    if (is_pregated(strategy) && gate == nullptr) {
        throw StateError(std::string(to_string(strategy)) + " layer forward needs a gate decision");
    }

    Matrix<T> y = [&] {
        ScopedLabel scope(recorder, std::string(labels::kBackbone));
        return gemm(model.backbone()[layer], x, recorder, cfg.tile);
    }();

    std::vector<Matrix<T>> terms;
    auto evaluate_experts = [&](const GateDecision& g) {
        ScopedLabel scope(recorder, std::string(labels::kAdapter));
        const auto& experts = model.bank().layers[layer];
        for (std::size_t b = 0; b < g.k(); ++b) {
            if (g.expert_ids[b] >= experts.size()) {
                throw IndexError("expert index " + std::to_string(g.expert_ids[b]) +
                                 " out of range");
            }
            terms.push_back(expert_apply(experts[g.expert_ids[b]], x, g.weights[b], recorder));
        }
    };

    if (strategy == Strategy::LayerWiseRouted) {
        GateDecision local;
        {
            ScopedLabel scope(recorder, std::string(labels::kRouter));
            local = route(model.layer_routers()[layer], x, cfg.top_k, recorder);
        }
        evaluate_experts(local);
    } else if (strategy == Strategy::PreGatedNaive) {
        evaluate_experts(*gate);
    }

    Matrix<T> out(cfg.hidden, 1);
    {
        ScopedLabel scope(recorder, std::string(labels::kBackbone));
        const std::size_t bytes = sizeof(T) * cfg.hidden * (3 + terms.size());
        elementwise<T>(
            out.values(),
            [&](std::size_t i) {
                T pre = y(i, 0);
                for (const Matrix<T>& t : terms) {
                    pre += t(i, 0);
                }
                return x(i, 0) + gelu(pre);
            },
            8 + terms.size(), bytes, recorder);
    }
    return out;
}

/// Running state of one sequence.
template <Real T>
struct DecodeState {
    Matrix<T> hidden;        // output of the last layer for the latest token
    std::size_t position = 0;  // tokens consumed so far
};

struct DecodeResult {
    std::size_t next_token = 0;
    std::size_t first_event = 0;  // recorder positions covering this step
    std::size_t last_event = 0;
};

/// Unmerges whatever the fusion record says is in the backbone: one SGMM for
/// the fused strategy, one gemm per layer for simple merge. No-op when pristine.
template <Real T>
void release_fusion(DecoderModel<T>& model, DispatchRecorder& recorder) {
    FusionRecord<T>& rec = model.fusion();
    if (!rec.active()) {
        return;
    }
    ScopedLabel scope(recorder, std::string(labels::kSwitch));
    const TileConfig& tile = model.config().tile;
    if (model.config().strategy == Strategy::PreGatedSimpleMerge) {
        merge_layerwise<T>(model.backbone(), rec.applied, Sign::Minus, recorder, tile);
    } else {
        merge_all<T>(model.backbone(), rec.applied, Sign::Minus, recorder, tile);
    }
    rec = {};
}

namespace detail {

template <Real T>
std::vector<ConcatAdapter<T>> gated_concats(const DecoderModel<T>& model,
                                            const GateDecision& gate) {
    std::vector<ConcatAdapter<T>> out;
    out.reserve(model.config().layers);
    for (const auto& layer : model.bank().layers) {
        out.push_back(concat_gated<T>(layer, gate));
    }
    return out;
}

template <Real T>
GateDecision token_gate(const DecoderModel<T>& model, const Matrix<T>& x,
                        DispatchRecorder& recorder) {
    ScopedLabel scope(recorder, std::string(labels::kRouter));
    return pre_gate(model.router(), x, model.config().top_k, recorder);
}

}  // namespace detail

// One greedy decode step for `token`. Pre-gated strategies route once on the
// embedded token. PreGatedFused switches every layer from the previous token's
// adapters to this token's with one SGMM; PreGatedSimpleMerge unmerges and
// merges with one gemm each per layer, right before that layer runs.
// layer_outputs, when given, receives the output of every layer.
template <Real T>
DecodeResult decode_step(DecoderModel<T>& model, DecodeState<T>& state, std::size_t token,
                         DispatchRecorder& recorder,
                         std::vector<Matrix<T>>* layer_outputs = nullptr) {
    const ModelConfig& cfg = model.config();
    const Strategy strategy = cfg.strategy;
    DecodeResult result;
    result.first_event = recorder.size();

    Matrix<T> x = embed_token(model, token);
    std::optional<GateDecision> gate;
    std::vector<ConcatAdapter<T>> current;
    if (is_pregated(strategy)) {
        gate = detail::token_gate(model, x, recorder);
    }
    if (merges_into_backbone(strategy)) {
        current = detail::gated_concats(model, *gate);
    }

    FusionRecord<T>& rec = model.fusion();
    if (strategy == Strategy::PreGatedFused) {
        std::vector<ConcatAdapter<T>> switches;
        const bool refresh = cfg.refresh_interval > 0 && rec.active() &&
                             rec.steps_since_refresh >= cfg.refresh_interval;
        if (refresh) {
            // Drops the accumulated rounding; this token merges from pristine.
            model.restore_pristine();
        }
        switches.reserve(cfg.layers);
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            switches.push_back(rec.active() ? build_switch(rec.applied[l], current[l])
                                            : current[l]);
        }
        {
            ScopedLabel scope(recorder, std::string(labels::kSwitch));
            merge_all<T>(model.backbone(), switches, Sign::Plus, recorder, cfg.tile);
        }
        rec.applied = current;
        ++rec.steps_since_refresh;
    }

    const GateDecision* gate_ptr = gate ? &*gate : nullptr;
    Matrix<T> h = std::move(x);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        if (strategy == Strategy::PreGatedSimpleMerge) {
            ScopedLabel scope(recorder, std::string(labels::kSwitch));
            if (rec.active()) {
                gemm_accumulate_inplace(model.backbone()[l], rec.applied[l].up_cat,
                                        rec.applied[l].down_cat, Sign::Minus, recorder, cfg.tile);
            }
            gemm_accumulate_inplace(model.backbone()[l], current[l].up_cat, current[l].down_cat,
                                    Sign::Plus, recorder, cfg.tile);
        }
        h = forward_layer(l, h, gate_ptr, strategy, model, recorder);
        if (layer_outputs != nullptr) {
            layer_outputs->push_back(h);
        }
    }
    if (strategy == Strategy::PreGatedSimpleMerge) {
        rec.applied = std::move(current);
    }

    {
        ScopedLabel scope(recorder, std::string(labels::kOther));
        const Matrix<T> logits = gemm(h.reshaped(1, cfg.hidden), model.unembed(), recorder, cfg.tile);
        result.next_token = argmax<T>(logits.values(), recorder);
    }
    state.hidden = std::move(h);
    ++state.position;
    result.last_event = recorder.size();
    return result;
}

// Runs the prompt through the strategy's unfused path, one token at a time and
// without the unembedding. Pre-gated strategies evaluate their adapters next
// to the backbone here; nothing is merged, so the first decode step merges
// from the pristine backbone.
template <Real T>
DecodeState<T> prefill(DecoderModel<T>& model, std::span<const std::size_t> tokens,
                       DispatchRecorder& recorder) {
    if (tokens.empty()) {
        throw InputError("prefill needs at least one token");
    }
    if (model.fusion().active()) {
        throw StateError("prefill on a backbone that still carries merged adapters");
    }
    const ModelConfig& cfg = model.config();
    const Strategy path = is_pregated(cfg.strategy) ? Strategy::PreGatedNaive : cfg.strategy;
    DecodeState<T> state;
    for (std::size_t token : tokens) {
        Matrix<T> h = embed_token(model, token);
        std::optional<GateDecision> gate;
        if (is_pregated(path)) {
            gate = detail::token_gate(model, h, recorder);
        }
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            h = forward_layer(l, h, gate ? &*gate : nullptr, path, model, recorder);
        }
        state.hidden = std::move(h);
        ++state.position;
    }
    return state;
}

enum class Capture { None, FinalHidden, AllLayers };

template <Real T>
struct GenerateResult {
    std::vector<std::size_t> tokens;
    std::vector<DispatchEvent> prefill_trace;
    std::vector<DispatchEvent> decode_trace;
    /// End-of-sequence unmerge; kept out of the decode trace (see generate()).
    DispatchSummary teardown;
    /// Per decode step: the final hidden state, or every layer's output.
    std::vector<std::vector<Matrix<T>>> hidden;
    /// Largest |backbone - pristine| after teardown.
    double backbone_deviation = 0.0;
};

// Greedy generation of n_new tokens. The prompt minus its last token is
// prefilled; every generated token comes from a decode step, the first of
// which consumes the last prompt token. So a fused run issues exactly n_new
// SGMM dispatches in its decode trace. Restoring the pristine backbone after
// the last token is recorded separately in `teardown`: it belongs to the
// sequence boundary, not to any token.
template <Real T>
GenerateResult<T> generate(DecoderModel<T>& model, std::span<const std::size_t> prompt,
                           std::size_t n_new, DispatchRecorder& recorder,
                           Capture capture = Capture::None) {
    if (n_new < 1) {
        throw ParameterError("n_new must be >= 1");
    }
    if (prompt.empty()) {
        throw InputError("empty prompt");
    }
    for (std::size_t t : prompt) {
        if (t >= model.config().vocab) {
            throw InputError("prompt token " + std::to_string(t) + " outside vocabulary");
        }
    }
    GenerateResult<T> out;
    const std::size_t start = recorder.size();
    DecodeState<T> state;
    if (prompt.size() > 1) {
        state = prefill(model, prompt.first(prompt.size() - 1), recorder);
    }
    out.prefill_trace = recorder.events_since(start);

    const std::size_t decode_start = recorder.size();
    std::size_t input = prompt.back();
    out.tokens.reserve(n_new);
    for (std::size_t i = 0; i < n_new; ++i) {
        std::vector<Matrix<T>> layers;
        const DecodeResult r = decode_step(model, state, input, recorder,
                                           capture == Capture::AllLayers ? &layers : nullptr);
        if (capture == Capture::FinalHidden) {
            out.hidden.push_back({state.hidden});
        } else if (capture == Capture::AllLayers) {
            out.hidden.push_back(std::move(layers));
        }
        out.tokens.push_back(r.next_token);
        input = r.next_token;
    }
    out.decode_trace = recorder.events_since(decode_start);

    DispatchRecorder teardown;
    release_fusion(model, teardown);
    out.teardown = teardown.summary();
    out.backbone_deviation = model.backbone_deviation();
    return out;
}

}  // namespace fuselora
