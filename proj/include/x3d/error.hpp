#pragma once

#include <stdexcept>
#include <string>

namespace x3d {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Tensor or image extents that do not fit an operation.
class ShapeError : public Error {
   public:
    using Error::Error;
};

/// A NaN or Inf appeared in a value, a gradient or an input image.
class NonFiniteError : public Error {
   public:
    using Error::Error;
};

/// Training produced a non-finite loss or gradient. The trainer keeps the last
/// finite parameters; `last_good_checkpoint` names the file they were written to
/// (empty when nothing was persisted).
class DivergenceError : public Error {
   public:
    DivergenceError(const std::string& what, std::string last_good_checkpoint)
        : Error(what), last_good_checkpoint_(std::move(last_good_checkpoint)) {}

    const std::string& last_good_checkpoint() const noexcept { return last_good_checkpoint_; }

   private:
    std::string last_good_checkpoint_;
};

/// Malformed or corrupt checkpoint / clip / flow / manifest file.
class FormatError : public Error {
   public:
    using Error::Error;
};

/// A checkpoint the caller depends on does not exist.
class MissingCheckpointError : public Error {
   public:
    using Error::Error;
};

/// Invalid run configuration (unknown key, unparsable value, violated range).
class ConfigError : public Error {
   public:
    using Error::Error;
};

class IoError : public Error {
   public:
    using Error::Error;
};

}  // namespace x3d
