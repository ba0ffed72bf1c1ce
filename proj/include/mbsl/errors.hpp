#pragma once

#include <stdexcept>
#include <string>

namespace mbsl {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes:
// contract/parameter/dimension/degenerate -> 1, io/format -> 2, training -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct ParameterError : Error {
    using Error::Error;
};

struct ContractError : Error {
    using Error::Error;
};

struct DegenerateInputError : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct TrainingError : Error {
    TrainingError(const std::string& msg, long step_index)
        : Error(msg + " (step " + std::to_string(step_index) + ")"), step(step_index) {}
    long step;
};

}  // namespace mbsl
