#pragma once

#include <stdexcept>
#include <string>

namespace kt {

// Error taxonomy mirrored by CLI exit codes: usage=1, data=2, protocol=3.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SchemaError : DataError {
    explicit SchemaError(const std::string& msg) : DataError(msg) {}
};

struct RowError : DataError {
    explicit RowError(const std::string& msg) : DataError(msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace kt
