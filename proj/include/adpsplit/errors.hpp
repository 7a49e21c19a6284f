#pragma once

#include <stdexcept>
#include <string>

namespace adpsplit {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed scene/camera file. Carries the 1-based line number of the
/// offending record (0 when the failure is not tied to a line).
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class InvariantError : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class BehindCamera : public Error {
public:
    using Error::Error;
};

class DegenerateRay : public Error {
public:
    using Error::Error;
};

class DegenerateAxes : public Error {
public:
    using Error::Error;
};

class Divergence : public Error {
public:
    using Error::Error;
};

} // namespace adpsplit
