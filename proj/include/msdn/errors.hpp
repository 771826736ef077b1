#pragma once

#include <stdexcept>
#include <string>

namespace msdn {

// Error taxonomy used across the library. The CLI maps ConfigError to
// exit code 1 and DataError/FormatError to exit code 2; DimensionError,
// ContractError and SchemaError indicate caller bugs or broken files.

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed binary file; the message carries the byte offset.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint entry names that do not match the model being loaded.
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace msdn
