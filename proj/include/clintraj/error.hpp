#pragma once

#include <stdexcept>
#include <string>

namespace clintraj {

/// Errors caused by caller input: malformed data, bad configuration, violated
/// preconditions. The CLI maps these to exit status 1.
class UserError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public UserError {
public:
    using UserError::UserError;
};

class ConfigError : public UserError {
public:
    using UserError::UserError;
};

class PreconditionError : public UserError {
public:
    using UserError::UserError;
};

/// Numerical failure that is not attributable to the input (singular systems
/// where the math says they cannot occur, and similar).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace clintraj
