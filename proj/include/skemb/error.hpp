#pragma once

#include <stdexcept>
#include <string>

namespace skemb {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input violates an operation's precondition (bad grid, bad measure, ...).
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// The embedding constraint cannot be met on the given grid or tree.
class Infeasible : public Error {
public:
    using Error::Error;
};

/// A reward or barrier failed a shape check.
class ShapeViolation : public Error {
public:
    using Error::Error;
};

/// An iterative method stopped making progress.
class Diverged : public Error {
public:
    using Error::Error;
};

}  // namespace skemb
