#pragma once

#include <stdexcept>
#include <string>

namespace detkit {

// Raised when a caller violates an operation's preconditions.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed annotation, detection or table text. Treated as a contract
// violation by the CLI (exit code 1).
class ParseError : public ContractError {
public:
    using ContractError::ContractError;
};

// Filesystem failures (exit code 2).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {
    inline void require(bool cond, const std::string& what) {
        if (!cond) {
            throw ContractError(what);
        }
    }
} // namespace detail

} // namespace detkit
