#ifndef KILNAUDIT_ERROR_HPP
#define KILNAUDIT_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kilnaudit {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Coordinate or numeric argument outside the valid domain.
class DomainError : public Error {
public:
    using Error::Error;
};

// Structurally invalid value (degenerate geometry, mixed frames, bad sizes).
class ValidationError : public Error {
public:
    using Error::Error;
};

// Malformed input text. Carries the 1-based line, or the byte offset for
// formats where lines are meaningless (JSON). Zero means "not known".
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line, std::size_t byte_offset = 0)
        : Error(what), line_(line), byte_offset_(byte_offset) {}

    std::size_t line() const noexcept { return line_; }
    std::size_t byte_offset() const noexcept { return byte_offset_; }

private:
    std::size_t line_;
    std::size_t byte_offset_;
};

// Invalid configuration (rule tables, production tables, service config).
class ConfigError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

// A requested state transition is not allowed from the current state.
class ConflictError : public Error {
public:
    using Error::Error;
};

} // namespace kilnaudit

#endif
