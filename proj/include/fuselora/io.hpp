// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

// Binary containers for expert banks and model checkpoints.
//
// All integers are little-endian u64 unless noted; matrices are written as
// (rows u64, cols u64, rows*cols IEEE values in row-major order).
//
//   bank:       "FLRBANK1" | precision u8 (0 single, 1 double) | L | N |
//               L*N * (down matrix, up matrix)
//   checkpoint: "FLRCKPT1" | precision u8 | layers | hidden | vocab | experts |
//               rank | top_k | seed | strategy u8 | tile m | tile n | tile k |
//               refresh_interval | embed | L backbone | bank container |
//               router | L-1 layer routers | unembed
//
// Checkpoints store the pristine backbone even while adapters are merged.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "fuselora/adapters.hpp"
#include "fuselora/error.hpp"
#include "fuselora/matrix.hpp"
#include "fuselora/model.hpp"

namespace fuselora {

static_assert(std::endian::native == std::endian::little, "containers assume a little-endian host");

namespace io_detail {

inline constexpr std::array<char, 8> kBankMagic = {'F', 'L', 'R', 'B', 'A', 'N', 'K', '1'};
inline constexpr std::array<char, 8> kCheckpointMagic = {'F', 'L', 'R', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint64_t kMaxDim = 1ULL << 32;

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) {
        throw FormatError("write failed");
    }
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (is.gcount() != static_cast<std::streamsize>(n)) {
        throw FormatError("unexpected end of data");
    }
}

inline void write_u64(std::ostream& os, std::uint64_t v) { write_bytes(os, &v, sizeof v); }
inline void write_u8(std::ostream& os, std::uint8_t v) { write_bytes(os, &v, sizeof v); }

inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    read_bytes(is, &v, sizeof v);
    return v;
}

inline std::uint8_t read_u8(std::istream& is) {
    std::uint8_t v = 0;
    read_bytes(is, &v, sizeof v);
    return v;
}

inline std::uint64_t read_dim(std::istream& is, const char* what) {
    const std::uint64_t v = read_u64(is);
    if (v > kMaxDim) {
        throw FormatError(std::string("implausible ") + what + " " + std::to_string(v));
    }
    return v;
}

inline void write_magic(std::ostream& os, const std::array<char, 8>& magic) {
    write_bytes(os, magic.data(), magic.size());
}

inline void expect_magic(std::istream& is, const std::array<char, 8>& magic, const char* what) {
    std::array<char, 8> got{};
    read_bytes(is, got.data(), got.size());
    if (got != magic) {
        throw FormatError(std::string("not a ") + what + " container");
    }
}

template <Real T>
void write_matrix(std::ostream& os, const Matrix<T>& m) {
    write_u64(os, m.rows());
    write_u64(os, m.cols());
    write_bytes(os, m.values().data(), sizeof(T) * m.size());
}

template <Real T>
Matrix<T> read_matrix(std::istream& is) {
    const std::uint64_t rows = read_dim(is, "row count");
    const std::uint64_t cols = read_dim(is, "column count");
    if (rows != 0 && cols > (std::numeric_limits<std::uint32_t>::max() / rows)) {
        throw FormatError("matrix too large");
    }
    std::vector<T> data(rows * cols);
    read_bytes(is, data.data(), sizeof(T) * data.size());
    try {
        return Matrix<T>(rows, cols, std::move(data));
    } catch (const ParameterError& e) {
        throw FormatError(e.what());
    }
}

template <Real T>
std::uint8_t precision_byte() {
    return precision_of<T>() == Precision::Double ? 1 : 0;
}

template <Real T>
void expect_precision(std::istream& is) {
    const std::uint8_t p = read_u8(is);
    if (p > 1) {
        throw FormatError("unknown precision tag " + std::to_string(p));
    }
    if (p != precision_byte<T>()) {
        throw FormatError(std::string("container holds ") + (p == 1 ? "double" : "single") +
                          " precision data");
    }
}

}  // namespace io_detail

template <Real T>
void save_bank(std::ostream& os, const ExpertBank<T>& bank) {
    using namespace io_detail;
    write_magic(os, kBankMagic);
    write_u8(os, precision_byte<T>());
    write_u64(os, bank.num_layers());
    write_u64(os, bank.num_experts());
    for (const auto& layer : bank.layers) {
        for (const LoraExpert<T>& e : layer) {
            write_matrix(os, e.down);
            write_matrix(os, e.up);
        }
    }
}

template <Real T>
ExpertBank<T> load_bank(std::istream& is) {
    using namespace io_detail;
    expect_magic(is, kBankMagic, "expert bank");
    expect_precision<T>(is);
    const std::uint64_t layers = read_dim(is, "layer count");
    const std::uint64_t experts = read_dim(is, "expert count");
    ExpertBank<T> bank;
    bank.layers.resize(layers);
    for (auto& layer : bank.layers) {
        for (std::uint64_t e = 0; e < experts; ++e) {
            Matrix<T> down = read_matrix<T>(is);
            Matrix<T> up = read_matrix<T>(is);
            LoraExpert<T> expert{std::move(down), std::move(up)};
            try {
                expert.validate();
            } catch (const DimensionError& err) {
                throw FormatError(err.what());
            }
            layer.push_back(std::move(expert));
        }
    }
    return bank;
}

/// Precision stored in a checkpoint header; leaves the stream past the tag.
inline Precision peek_checkpoint_precision(std::istream& is) {
    using namespace io_detail;
    expect_magic(is, kCheckpointMagic, "checkpoint");
    const std::uint8_t p = read_u8(is);
    if (p > 1) {
        throw FormatError("unknown precision tag " + std::to_string(p));
    }
    return p == 1 ? Precision::Double : Precision::Single;
}

template <Real T>
void save_checkpoint(std::ostream& os, const DecoderModel<T>& model) {
    using namespace io_detail;
    const ModelConfig& c = model.config();
    write_magic(os, kCheckpointMagic);
    write_u8(os, precision_byte<T>());
    for (std::uint64_t v : {std::uint64_t{c.layers}, std::uint64_t{c.hidden}, std::uint64_t{c.vocab},
                            std::uint64_t{c.experts}, std::uint64_t{c.rank}, std::uint64_t{c.top_k},
                            c.seed}) {
        write_u64(os, v);
    }
    write_u8(os, static_cast<std::uint8_t>(c.strategy));
    write_u64(os, c.tile.m);
    write_u64(os, c.tile.n);
    write_u64(os, c.tile.k);
    write_u64(os, c.refresh_interval);
    write_matrix(os, model.embed());
    for (const Matrix<T>& f : model.pristine()) {
        write_matrix(os, f);
    }
    save_bank(os, model.bank());
    write_matrix(os, model.router().w_g);
    for (std::size_t l = 1; l < model.layer_routers().size(); ++l) {
        write_matrix(os, model.layer_routers()[l].w_g);
    }
    write_matrix(os, model.unembed());
}

template <Real T>
DecoderModel<T> load_checkpoint(std::istream& is) {
    using namespace io_detail;
    if (peek_checkpoint_precision(is) != precision_of<T>()) {
        throw FormatError("checkpoint precision does not match the requested model type");
    }
    ModelConfig c;
    c.precision = precision_of<T>();
    c.layers = read_dim(is, "layers");
    c.hidden = read_dim(is, "hidden");
    c.vocab = read_dim(is, "vocab");
    c.experts = read_dim(is, "experts");
    c.rank = read_dim(is, "rank");
    c.top_k = read_dim(is, "top_k");
    c.seed = read_u64(is);
    const std::uint8_t strategy = read_u8(is);
    if (strategy >= kAllStrategies.size()) {
        throw FormatError("unknown strategy tag " + std::to_string(strategy));
    }
    c.strategy = static_cast<Strategy>(strategy);
    c.tile.m = read_dim(is, "tile m");
    c.tile.n = read_dim(is, "tile n");
    c.tile.k = read_dim(is, "tile k");
    c.refresh_interval = read_u64(is);

    Matrix<T> embed = read_matrix<T>(is);
    std::vector<Matrix<T>> backbone;
    for (std::size_t l = 0; l < c.layers; ++l) {
        backbone.push_back(read_matrix<T>(is));
    }
    ExpertBank<T> bank = load_bank<T>(is);
    RouterParams<T> router{read_matrix<T>(is)};
    std::vector<RouterParams<T>> layer_routers{router};
    for (std::size_t l = 1; l < c.layers; ++l) {
        layer_routers.push_back(RouterParams<T>{read_matrix<T>(is)});
    }
    Matrix<T> unembed = read_matrix<T>(is);
    try {
        return DecoderModel<T>(c, std::move(embed), std::move(backbone), std::move(bank),
                               std::move(router), std::move(layer_routers), std::move(unembed));
    } catch (const FormatError&) {
        throw;
    } catch (const Error& e) {
        throw FormatError(std::string("inconsistent checkpoint: ") + e.what());
    }
}

template <Real T>
void save_checkpoint_file(const std::string& path, const DecoderModel<T>& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw FormatError("cannot open " + path + " for writing");
    }
    save_checkpoint(os, model);
}

template <Real T>
DecoderModel<T> load_checkpoint_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("cannot open " + path);
    }
    return load_checkpoint<T>(is);
}

}  // namespace fuselora
