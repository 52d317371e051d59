#pragma once

#include <stdexcept>
#include <string>

namespace oversense {

/// Base class for all recoverable errors raised by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration, including empty corpora and
/// single-class training data.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Stored state disagrees with itself (dimension mismatch, stale vocabulary
/// hash).
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// An operation that requires at least one token received none.
class EmptyInputError : public Error {
public:
    using Error::Error;
};

/// A structured file failed to parse. Carries the 1-based line number.
class ParseError : public Error {
public:
    ParseError(const std::string& path, int line, const std::string& what)
        : Error(path + ":" + std::to_string(line) + ": " + what),
          path_(path),
          line_(line) {}

    const std::string& path() const { return path_; }
    int line() const { return line_; }

private:
    std::string path_;
    int line_;
};

/// Network-level failure after retries were exhausted. status() is the last
/// HTTP status, or 0 when no response was received at all.
class TransportError : public Error {
public:
    TransportError(const std::string& what, int status = 0)
        : Error(what), status_(status) {}

    int status() const { return status_; }

private:
    int status_;
};

/// The remote endpoint answered, but the body did not match the wire format.
class ProtocolError : public Error {
public:
    using Error::Error;
};

/// The judge model replied with something other than the constrained answer
/// set. raw() carries the verbatim reply for diagnosis.
class JudgeFormatError : public Error {
public:
    explicit JudgeFormatError(const std::string& raw)
        : Error("judge reply is not REFUSAL or COMPLY: \"" + raw + "\""),
          raw_(raw) {}

    const std::string& raw() const { return raw_; }

private:
    std::string raw_;
};

/// Training produced a non-finite loss. epoch() names the offending epoch.
class TrainingDivergedError : public Error {
public:
    explicit TrainingDivergedError(int epoch)
        : Error("training diverged: non-finite loss at epoch " +
                std::to_string(epoch)),
          epoch_(epoch) {}

    int epoch() const { return epoch_; }

private:
    int epoch_;
};

/// A numeric computation produced a non-finite value outside training.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A metric is undefined for the given inputs (zero benign prompts, coverage
/// gaps). Never silently reported as zero.
class MetricsError : public Error {
public:
    using Error::Error;
};

/// Another process holds the output directory lock.
class LockError : public Error {
public:
    using Error::Error;
};

/// A guarded precondition was violated by the caller. Deliberately a logic
/// error: this indicates a bug, not bad input.
class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace oversense
