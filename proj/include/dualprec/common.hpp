#pragma once

#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace dualprec {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or size of an argument does not match what the operation requires.
struct ShapeError : Error {
    using Error::Error;
};

// Parameter value outside its documented range.
struct ParamError : Error {
    using Error::Error;
};

// Malformed binary container or payload of the wrong size.
struct FormatError : Error {
    using Error::Error;
};

// Text input (delimited table, config file) that does not parse.
struct ParseError : Error {
    using Error::Error;
};

// Invalid run configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Operation invoked in a state it does not support (e.g. backward without caches).
struct StateError : Error {
    using Error::Error;
};

// Training produced a non-finite loss.
struct DivergenceError : Error {
    using Error::Error;
};

inline std::string strf(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    char buf[512];
    std::vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    return std::string(buf);
}

}  // namespace dualprec
