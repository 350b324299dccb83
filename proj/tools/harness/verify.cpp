// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include <fmt/format.h>

#include "commands.hpp"
#include "runner.hpp"

namespace fuselora::harness {
namespace {

constexpr double kHiddenTol = 1e-9;
constexpr double kRestoreTol = 1e-8;
constexpr double kMergeTol = 1e-10;
constexpr double kCancelTol = 1e-12;
constexpr double kSingleExpertTol = 1e-12;

double max_layer_deviation(const GenerateResult<double>& a, const GenerateResult<double>& b) {
    double dev = 0.0;
    const std::size_t steps = std::min(a.hidden.size(), b.hidden.size());
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t l = 0; l < a.hidden[t].size(); ++l) {
            dev = std::max(dev, max_abs_diff(a.hidden[t][l], b.hidden[t][l]));
        }
    }
    return dev;
}

std::size_t mismatches(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
        n += a[i] != b[i];
    }
    return n + (std::max(a.size(), b.size()) - std::min(a.size(), b.size()));
}

GenerateResult<double> run(const DecoderModel<double>& base, Strategy s, const Prompt& prompt,
                           std::size_t n_new) {
    DecoderModel<double> model = base;
    model.set_strategy(s);
    DispatchRecorder rec;
    return generate(model, std::span<const std::size_t>(prompt), n_new, rec, Capture::AllLayers);
}

std::vector<ConcatAdapter<double>> gated_concats(const DecoderModel<double>& model, std::size_t token) {
    DispatchRecorder rec;
    const GateDecision gate =
        pre_gate(model.router(), embed_token(model, token), model.config().top_k, rec);
    std::vector<ConcatAdapter<double>> out;
    for (const auto& layer : model.bank().layers) {
        out.push_back(concat_gated(std::span<const LoraExpert<double>>(layer), gate));
    }
    return out;
}

}  // namespace

bool VerifyReport::all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

VerifyReport run_verify(const RunConfig& config, const std::optional<std::string>& checkpoint) {
    if (checkpoint && detail::checkpoint_precision(*checkpoint) != Precision::Double) {
        throw InputError("verify needs a double-precision checkpoint");
    }
    const DecoderModel<double> base = detail::make_model<double>(config.model, checkpoint);
    const ModelConfig& mc = base.config();
    const auto prompts = synthetic_prompts({mc.vocab, config.verify_prompts, config.synthetic_len_min,
                                            config.synthetic_len_max, mc.seed});
    const std::size_t n_new = config.verify_tokens;

    double hidden_dev = 0.0;
    std::size_t token_diff = 0;
    double restore_dev = 0.0;
    std::size_t wrong_sgmm = 0;
    double single_dev = 0.0;
    std::size_t single_diff = 0;
    const bool single_expert = mc.experts == 1 && mc.top_k == 1;

    for (const Prompt& prompt : prompts) {
        const auto naive = run(base, Strategy::PreGatedNaive, prompt, n_new);
        for (Strategy s : {Strategy::PreGatedSimpleMerge, Strategy::PreGatedFused}) {
            const auto other = run(base, s, prompt, n_new);
            hidden_dev = std::max(hidden_dev, max_layer_deviation(naive, other));
            token_diff += mismatches(naive.tokens, other.tokens);
            restore_dev = std::max(restore_dev, other.backbone_deviation);
            if (s == Strategy::PreGatedFused && summarize(other.decode_trace).sgmm != n_new) {
                ++wrong_sgmm;
            }
        }
        if (single_expert) {
            const auto layerwise = run(base, Strategy::LayerWiseRouted, prompt, n_new);
            single_dev = std::max(single_dev, max_layer_deviation(naive, layerwise));
            single_diff += mismatches(naive.tokens, layerwise.tokens);
        }
    }

    VerifyReport report;
    report.checks.push_back({"pregated_hidden_equivalence", hidden_dev, kHiddenTol,
                             hidden_dev < kHiddenTol && token_diff == 0,
                             fmt::format("{} token mismatches over {} prompts x {} tokens", token_diff,
                                         prompts.size(), n_new)});
    report.checks.push_back({"backbone_restoration", restore_dev, kRestoreTol, restore_dev < kRestoreTol,
                             "after every simple-merge and fused generation"});
    report.checks.push_back({"one_sgmm_per_fused_token", static_cast<double>(wrong_sgmm), 0.0,
                             wrong_sgmm == 0, fmt::format("{} prompts off the expected count", wrong_sgmm)});

    // Fused single dispatch against per-layer merging of the same table.
    {
        const auto concats = gated_concats(base, prompts.front().front());
        std::vector<Matrix<double>> fused = base.pristine();
        std::vector<Matrix<double>> layered = base.pristine();
        DispatchRecorder fused_rec;
        DispatchRecorder layered_rec;
        merge_all(std::span<Matrix<double>>(fused), std::span<const ConcatAdapter<double>>(concats),
                  Sign::Plus, fused_rec, mc.tile);
        merge_layerwise(std::span<Matrix<double>>(layered), std::span<const ConcatAdapter<double>>(concats),
                        Sign::Plus, layered_rec, mc.tile);
        double dev = 0.0;
        for (std::size_t l = 0; l < fused.size(); ++l) {
            dev = std::max(dev, max_abs_diff(fused[l], layered[l]));
        }
        const bool counts = fused_rec.summary().sgmm == 1 && fused_rec.size() == 1 &&
                            layered_rec.summary().gemm == mc.layers && layered_rec.size() == mc.layers;
        report.checks.push_back({"sgmm_vs_layerwise_merge", dev, kMergeTol, dev < kMergeTol && counts,
                                 fmt::format("1 sgmm vs {} gemm dispatches", layered_rec.size())});

        DispatchRecorder rec;
        const auto sw = build_switch(concats.front(), concats.front());
        const double delta = max_abs(gemm(sw.up_cat, sw.down_cat, rec));
        report.checks.push_back({"identical_gate_switch_cancels", delta, kCancelTol, delta < kCancelTol,
                                 "layer 0 switch for a repeated gate"});
    }

    if (single_expert) {
        report.checks.push_back({"layerwise_routed == pregated_naive", single_dev, kSingleExpertTol,
                                 single_dev < kSingleExpertTol && single_diff == 0,
                                 "single expert makes routing location irrelevant"});
    }
    return report;
}

std::string format_verify(const VerifyReport& report) {
    std::string out;
    for (const CheckResult& c : report.checks) {
        out += fmt::format("{:<40} {}  max_dev={:.3e}  tol={:.0e}  ({})\n", c.name, c.pass ? "PASS" : "FAIL",
                           c.value, c.tolerance, c.detail);
    }
    out += fmt::format("verify: {}\n", report.all_pass() ? "all checks within tolerance" : "TOLERANCE FAILURE");
    return out;
}

}  // namespace fuselora::harness
