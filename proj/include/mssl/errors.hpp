#pragma once

#include <stdexcept>
#include <string>

namespace mssl {

/// Operand shapes or channel counts do not agree.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The self-pair denominator of a similarity map is (numerically) zero.
class DegenerateNormalization : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A loss, gradient or parameter became non-finite.
class NumericalInstability : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file: wrong magic, unsupported version, truncated payload.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid or infeasible configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Synthetic scene constraints (prototype margins, source placement) cannot
/// be met.
class InfeasibleMargin : public ConfigError {
public:
    using ConfigError::ConfigError;
};

} // namespace mssl
