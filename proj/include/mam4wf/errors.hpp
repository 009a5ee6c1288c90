#pragma once

#include <stdexcept>
#include <string>

namespace mam4wf {

// Error families map 1:1 onto CLI exit codes (see tools/mam4wf.cpp).

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad static configuration: odd embedding dim, indivisible spatial dims, ...
struct ConfigError : Error {
  using Error::Error;
};

// A value outside its documented range (lead time, split bounds, ...).
struct RangeError : Error {
  using Error::Error;
};

// Malformed on-disk data: bad magic, truncated payload, dtype mismatch.
struct FormatError : Error {
  using Error::Error;
};

// Object state violates an operation precondition (history length, frozen
// parameters mutated, shape drift between live and EMA parameters).
struct StateError : Error {
  using Error::Error;
};

// Incompatible arguments to a pure function (metric shape mismatch, ...).
struct ArgumentError : Error {
  using Error::Error;
};

// Requested horizon exceeds the queue capacity fixed at training time.
struct CapacityError : Error {
  using Error::Error;
};

// Non-finite training loss. The train loop preserves state for inspection.
struct DivergenceError : Error {
  using Error::Error;
};

// Filesystem trouble distinct from format problems.
struct IoError : Error {
  using Error::Error;
};

}  // namespace mam4wf
