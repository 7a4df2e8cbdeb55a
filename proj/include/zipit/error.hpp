#pragma once

#include <stdexcept>
#include <string>

namespace zipit {

// Base for every failure raised by the library. The CLI maps subclasses to
// exit codes, so new failure categories should derive from one of these.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// Non-finite values, divergence, infeasible numeric setups.
class NumericError : public Error {
public:
    using Error::Error;
};

// Models that cannot be combined (different node sets, kinds or shapes).
class TopologyError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace zipit
