#pragma once

#include <stdexcept>
#include <string>

namespace mmclab {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes or latent dimensions do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// An argument is outside its documented range (n < 1, empty class, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Input outside the mathematical domain of a formula.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Incompatible combination of settings (mask variant vs data model, ...).
class ConfigurationError : public Error {
public:
    using Error::Error;
};

/// Enumeration would exceed the row cap.
class SizeError : public Error {
public:
    using Error::Error;
};

/// Gradient descent diverged.
class TrainingError : public Error {
public:
    using Error::Error;
};

/// Hard-margin problem has no feasible separator.
class InfeasibleError : public Error {
public:
    using Error::Error;
};

/// A score or statistic came out non-finite.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Experiment config failed validation; the message lists offending fields.
class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace mmclab
