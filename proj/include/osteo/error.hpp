#pragma once

#include <stdexcept>
#include <string>

namespace osteo {

// Error taxonomy shared by the whole library. The CLI maps these onto exit
// codes, so new failure modes should pick the closest existing class.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shapes that cannot be combined.
struct DimensionError : Error {
    using Error::Error;
};

// Semantically invalid arguments (bad label index, non-scalar loss, ...).
struct InputError : Error {
    using Error::Error;
};

// Operation applied in the wrong object state (tape reuse, missing grads).
struct StateError : Error {
    using Error::Error;
};

// Malformed text or binary content.
struct ParseError : Error {
    using Error::Error;
};

// Filesystem-level failures.
struct IoError : Error {
    using Error::Error;
};

// TSCK checkpoint problems, including shape disagreements on load.
struct CheckpointError : Error {
    using Error::Error;
};

// Non-finite values where the computation cannot continue (NaN loss, ...).
struct NumericError : Error {
    using Error::Error;
};

} // namespace osteo
