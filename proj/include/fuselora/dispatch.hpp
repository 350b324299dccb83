// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fuselora {

// A dispatch stands for one device kernel launch. Everything in the engine runs
// on the host, so the recorder is what makes launch counts observable.
enum class DispatchKind : std::uint8_t { Gemm, Sgmm, Elementwise, Reduce };

inline constexpr std::array<DispatchKind, 4> kAllDispatchKinds = {
    DispatchKind::Gemm, DispatchKind::Sgmm, DispatchKind::Elementwise, DispatchKind::Reduce};

inline std::string_view to_string(DispatchKind kind) {
    switch (kind) {
    case DispatchKind::Gemm:
        return "gemm";
    case DispatchKind::Sgmm:
        return "sgmm";
    case DispatchKind::Elementwise:
        return "elementwise";
    case DispatchKind::Reduce:
        return "reduce";
    }
    return "unknown";
}

struct DispatchEvent {
    DispatchKind kind = DispatchKind::Gemm;
    std::uint64_t flops = 0;
    std::uint64_t bytes_touched = 0;
    std::string label;

    friend bool operator==(const DispatchEvent&, const DispatchEvent&) = default;
};

struct DispatchSummary {
    std::uint64_t gemm = 0;
    std::uint64_t sgmm = 0;
    std::uint64_t elementwise = 0;
    std::uint64_t reduce = 0;
    std::uint64_t flops = 0;
    std::uint64_t bytes = 0;

    /// gemm + sgmm: the matrix-multiply launches the closed-form counts refer to.
    std::uint64_t gemm_class() const noexcept { return gemm + sgmm; }
    std::uint64_t total() const noexcept { return gemm + sgmm + elementwise + reduce; }

    std::uint64_t count(DispatchKind kind) const noexcept {
        switch (kind) {
        case DispatchKind::Gemm:
            return gemm;
        case DispatchKind::Sgmm:
            return sgmm;
        case DispatchKind::Elementwise:
            return elementwise;
        case DispatchKind::Reduce:
            return reduce;
        }
        return 0;
    }

    void add(const DispatchEvent& e) noexcept {
        switch (e.kind) {
        case DispatchKind::Gemm:
            ++gemm;
            break;
        case DispatchKind::Sgmm:
            ++sgmm;
            break;
        case DispatchKind::Elementwise:
            ++elementwise;
            break;
        case DispatchKind::Reduce:
            ++reduce;
            break;
        }
        flops += e.flops;
        bytes += e.bytes_touched;
    }

    friend bool operator==(const DispatchSummary&, const DispatchSummary&) = default;
};

template <typename It>
DispatchSummary summarize(It first, It last) {
    DispatchSummary s;
    for (; first != last; ++first) {
        s.add(*first);
    }
    return s;
}

inline DispatchSummary summarize(const std::vector<DispatchEvent>& events) {
    return summarize(events.begin(), events.end());
}

// Append-only event log. Events take the label that is current when they are
// recorded; callers set it with ScopedLabel. Not thread-safe: one recorder
// belongs to one engine instance.
class DispatchRecorder {
public:
    void record(DispatchKind kind, std::uint64_t flops, std::uint64_t bytes) {
        events_.push_back(DispatchEvent{kind, flops, bytes, label_});
    }

    const std::vector<DispatchEvent>& events() const noexcept { return events_; }
    std::size_t size() const noexcept { return events_.size(); }

    DispatchSummary summary() const { return summarize(events_); }

    /// Summary of events recorded at positions [from, size()).
    DispatchSummary summary_since(std::size_t from) const {
        return summarize(events_.begin() + static_cast<std::ptrdiff_t>(from), events_.end());
    }

    std::vector<DispatchEvent> events_since(std::size_t from) const {
        return {events_.begin() + static_cast<std::ptrdiff_t>(from), events_.end()};
    }

    const std::string& label() const noexcept { return label_; }
    void set_label(std::string label) { label_ = std::move(label); }

    void clear() noexcept { events_.clear(); }

private:
    std::vector<DispatchEvent> events_;
    std::string label_ = "other";
};

/// Counts per kind and total flops since the last reset, then clears the log.
inline DispatchSummary reset_and_report(DispatchRecorder& recorder) {
    DispatchSummary s = recorder.summary();
    recorder.clear();
    return s;
}

class ScopedLabel {
public:
    ScopedLabel(DispatchRecorder& recorder, std::string label)
        : recorder_(recorder), saved_(recorder.label()) {
        recorder_.set_label(std::move(label));
    }
    ~ScopedLabel() { recorder_.set_label(std::move(saved_)); }

    ScopedLabel(const ScopedLabel&) = delete;
    ScopedLabel& operator=(const ScopedLabel&) = delete;

private:
    DispatchRecorder& recorder_;
    std::string saved_;
};

}  // namespace fuselora
