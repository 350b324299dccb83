// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <optional>
#include <string>

#include "fuselora/io.hpp"
#include "fuselora/model.hpp"
#include "fuselora/perf.hpp"

namespace fuselora::harness::detail {

template <Real T>
DecoderModel<T> make_model(const ModelConfig& config, const std::optional<std::string>& checkpoint) {
    if (!checkpoint) {
        ModelConfig c = config;
        c.precision = precision_of<T>();
        return build_model<T>(c);
    }
    try {
        return load_checkpoint_file<T>(*checkpoint);
    } catch (const FormatError& e) {
        throw InputError("checkpoint " + *checkpoint + ": " + e.what());
    }
}

/// Precision stored in a checkpoint file.
inline Precision checkpoint_precision(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw InputError("cannot read checkpoint " + path);
    }
    try {
        return peek_checkpoint_precision(is);
    } catch (const FormatError& e) {
        throw InputError("checkpoint " + path + ": " + e.what());
    }
}

/// Dispatches of one steady-state decode step (the second of two) under `s`.
/// The model is left unfused.
template <Real T>
DispatchTrace steady_decode_trace(DecoderModel<T>& model, Strategy s, std::size_t warm_token,
                                  std::size_t token) {
    model.set_strategy(s);
    DispatchRecorder rec;
    DecodeState<T> state;
    decode_step(model, state, warm_token, rec);
    const DecodeResult step = decode_step(model, state, token, rec);
    DispatchTrace trace = rec.events_since(step.first_event);
    release_fusion(model, rec);
    return trace;
}

/// Milliseconds spent in events matching the predicate.
template <typename Pred>
double trace_ms(const DispatchTrace& trace, const CostModel& cm, Pred&& keep) {
    double s = 0.0;
    for (const DispatchEvent& e : trace) {
        if (keep(e)) {
            s += cm.event_s(e);
        }
    }
    return s * 1e3;
}

}  // namespace fuselora::harness::detail
