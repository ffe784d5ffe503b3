#pragma once

#include <stdexcept>
#include <string>

namespace gsr {

// Base for every error raised by the library. Callers that only care about
// "something in gsr failed" catch this; the subclasses exist so tests and the
// CLI can tell input problems from format problems.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace gsr
