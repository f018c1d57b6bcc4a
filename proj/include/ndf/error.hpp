#pragma once

#include <stdexcept>
#include <string>

namespace ndf {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File-level problems.
class FormatError : public Error { using Error::Error; };
class CorruptFileError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };

// Caller problems.
class ParameterError : public Error { using Error::Error; };
class LookupError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class NotFoundError : public Error { using Error::Error; };

/// Raised by estimators whose input carries no information (e.g. zero variance).
class DegenerateInputError : public Error { using Error::Error; };

class TrainingError : public Error { using Error::Error; };
class ModelCorruptError : public Error { using Error::Error; };

} // namespace ndf
