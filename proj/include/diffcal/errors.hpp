#pragma once

#include <stdexcept>
#include <string>

namespace diffcal {

// All library failures surface as one of these. Callers that want to keep
// going (the CLI, the pipeline driver) catch diffcal::Error; everything else
// lets them propagate.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Shape or dimensionality mismatch between operands.
struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error("shape: " + what) {}
};

// NaN/Inf detected, or a matrix that must be invertible/PD is not.
struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error("numeric: " + what) {}
};

// An API precondition was violated (wrong call order, frozen weights
// mutated, gradient missing before an optimizer step, ...).
struct ContractError : Error {
    explicit ContractError(const std::string& what) : Error("contract: " + what) {}
};

// Index or argument outside its documented range.
struct RangeError : Error {
    explicit RangeError(const std::string& what) : Error("range: " + what) {}
};

// Bad key, unparsable value, or missing required field in a config/artifact.
struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("config: " + what) {}
};

// Training diverged (non-finite loss); message carries epoch/step.
struct TrainingError : Error {
    explicit TrainingError(const std::string& what) : Error("training: " + what) {}
};

} // namespace diffcal
