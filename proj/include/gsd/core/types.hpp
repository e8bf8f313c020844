#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gsd {

#ifdef GSD_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

// Error taxonomy used across the library. CLI maps these onto exit codes:
// usage errors are handled by the argument parser, DataError -> 2,
// NumericError -> 3, everything else is a bug.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/layer dimensions don't line up.
struct ShapeError : Error {
    using Error::Error;
};

// A documented precondition was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

// A parameter value is out of its legal range (grid size <= 0, t outside [0,1], ...).
struct ParamError : Error {
    using Error::Error;
};

// NaN/Inf encountered where finite values are required.
struct NumericError : Error {
    using Error::Error;
};

// Dataset / file format problems.
struct DataError : Error {
    using Error::Error;
};

// 6D rotation input failed Gram-Schmidt (near-zero or parallel columns).
struct RotationDegeneracyError : Error {
    using Error::Error;
};

}  // namespace gsd
