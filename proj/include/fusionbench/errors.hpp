#pragma once

#include <stdexcept>
#include <string>

namespace fusionbench {

/// Base class for every error raised by the library. The CLI maps the
/// concrete subclasses onto its exit-code contract.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid hyperparameters, model configs or experiment configs.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Calling an operation outside its precondition (empty inputs etc).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Malformed values inside records (non-binary labels, non-finite features).
class DataError : public Error {
public:
    using Error::Error;
};

/// Non-finite values in a forward/backward pass or a loss.
class NumericError : public Error {
public:
    using Error::Error;
};

/// On-disk dataset or checkpoint that does not match its manifest/header.
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// Filesystem failures.
class IoError : public Error {
public:
    using Error::Error;
};

class StratificationError : public Error {
public:
    using Error::Error;
};

class ResamplingError : public Error {
public:
    using Error::Error;
};

class GenerationError : public Error {
public:
    using Error::Error;
};

/// AUC requested for labels that contain only one class.
class UndefinedAucError : public Error {
public:
    using Error::Error;
};

} // namespace fusionbench
