#pragma once

#include <stdexcept>
#include <string>

namespace ichseq {

// Exit codes used by the command-line tool. Each error class maps to one.
enum class ExitCode : int {
    kOk = 0,
    kConfig = 2,
    kData = 3,
    kRuntime = 4,
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual ExitCode exit_code() const noexcept { return ExitCode::kRuntime; }
    virtual const char* kind() const noexcept { return "runtime"; }
};

/// Invalid parameters, unknown keys, malformed config files.
class ConfigError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::kConfig; }
    const char* kind() const noexcept override { return "config"; }
};

/// Malformed or inconsistent input data (shapes, labels, manifests).
class DataError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::kData; }
    const char* kind() const noexcept override { return "data"; }
};

/// A file could not be opened, read or written. Carries the offending path.
class IoError : public DataError {
public:
    IoError(const std::string& what, std::string path)
        : DataError(what + ": " + path), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }
    const char* kind() const noexcept override { return "io"; }

private:
    std::string path_;
};

/// Non-finite loss or similar numeric breakdown during training.
class NumericError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "numeric"; }
};

/// Caller broke a documented precondition (shape mismatch, bad lengths).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace ichseq
