#pragma once

#include <stdexcept>
#include <string>

namespace taskvec {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user input: malformed config, unreadable or corrupt files, invalid
// parameter combinations. CLI maps this to exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// Failure inside a training run (empty splits, non-finite loss). Exit code 3.
struct TrainError : Error {
    using Error::Error;
};

// Structural mismatch between tensor collections (missing names, different
// shapes). Exit code 4.
struct CompatError : Error {
    using Error::Error;
};

// Failure while running an experiment suite. Exit code 5.
struct ExperimentError : Error {
    using Error::Error;
};

} // namespace taskvec
