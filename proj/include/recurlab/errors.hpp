#pragma once

#include <stdexcept>
#include <string>

namespace recurlab {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Point outside [0,1] handed to an interval map.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Input coincides with a singular point where the map is undefined.
class SingularInput : public Error {
public:
    using Error::Error;
};

/// An orbit iterate landed within tolerance of the singular set.
class SingularOrbit : public Error {
public:
    using Error::Error;
};

class GrazingCollision : public Error {
public:
    using Error::Error;
};

class HorizonExceeded : public Error {
public:
    using Error::Error;
};

/// Ball meets the phase-space boundary |phi| = pi/2.
class BoundaryBall : public Error {
public:
    using Error::Error;
};

class BoundaryState : public Error {
public:
    using Error::Error;
};

/// Time tuple not strictly increasing or out of range.
class OrderError : public Error {
public:
    using Error::Error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

class EmptyError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Invalid billiard geometry (overlap or open corridor).
class TableError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class MissingInput : public IoError {
public:
    using IoError::IoError;
};

} // namespace recurlab
