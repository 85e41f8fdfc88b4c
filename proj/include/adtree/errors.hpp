#pragma once

#include <stdexcept>
#include <string>

namespace adtree {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A documented precondition was violated by the caller.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Scenario configuration could not be parsed or validated.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A model source is inconsistent (vocab/grid mismatch, bad logits).
class ModelError : public Error {
public:
    using Error::Error;
};

/// Structured failure while decoding a logit trace file.
class TraceFormatError : public ModelError {
public:
    enum class Kind { bad_magic, unsupported_version, truncated, checksum, malformed };

    TraceFormatError(Kind kind, const std::string& what) : ModelError(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Filesystem read/write failure.
class IoError : public Error {
public:
    using Error::Error;
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw PreconditionError(what);
}

}  // namespace adtree
