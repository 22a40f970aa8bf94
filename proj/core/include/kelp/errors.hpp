#pragma once

#include <stdexcept>
#include <string>

namespace kelp {

// Base class for all library failures. Subtypes exist so callers can
// distinguish bad inputs (reject the artifact) from bad state (abort the run).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or size mismatch in a numeric operation. Messages name both operands.
struct DimensionError : Error {
  using Error::Error;
};

// Structural violation in a loaded or constructed artifact (corpus sentence,
// dictionary, knowledge base, rule set).
struct ValidationError : Error {
  using Error::Error;
};

// Unreadable file content. Messages carry the source line where applicable.
struct ParseError : Error {
  using Error::Error;
};

// A run was requested with settings that cannot work (missing inputs for an
// enabled task, impossible sizes). Raised before any step executes.
struct ConfigError : Error {
  using Error::Error;
};

// Failed lookup of an id, token, mention, or named checkpoint entry.
struct LookupError : Error {
  using Error::Error;
};

// A masking stage that needs an annotated fact was given a sentence without one.
struct FactRequiredError : Error {
  using Error::Error;
};

// Non-recoverable numeric failure mid-run (non-finite loss). Exit code 2.
struct RuntimeAbort : Error {
  using Error::Error;
};

}  // namespace kelp
