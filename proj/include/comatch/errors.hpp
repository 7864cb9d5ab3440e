#pragma once

#include <stdexcept>
#include <string>

namespace comatch {

// Shape/extent disagreements between tensors.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Caller passed a value outside an operation's documented range.
struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// An API contract was violated (wrong mode, missing cache, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Problems with datasets: empty corpora, unpairable scenes, missing files.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input files; message names the offending file.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (training divergence).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace comatch
