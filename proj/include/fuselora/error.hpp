// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace fuselora {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-conformable shapes.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Two segments of one SGMM call write the same target matrix.
class AliasingError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or argument value.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Operation invoked in a state that does not allow it (e.g. a pre-gated
/// layer forward without a gate decision).
class StateError : public Error {
public:
    using Error::Error;
};

/// Bad user input: unknown token, empty prompt.
class InputError : public Error {
public:
    using Error::Error;
};

class CalibrationError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated serialized data.
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace fuselora
