#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lire {

// Base for every error raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class InvalidStateError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Violated precondition on caller-supplied data (empty answer set, duplicate ids, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class TrainingError : public Error {
public:
    TrainingError(const std::string& what, std::size_t step)
        : Error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

// Failures talking to a generation service.
class TransportError : public Error {
public:
    using Error::Error;
};

class TimeoutError : public TransportError {
public:
    using TransportError::TransportError;
};

class ConnectionError : public TransportError {
public:
    using TransportError::TransportError;
};

class ProtocolError : public TransportError {
public:
    using TransportError::TransportError;
};

// Wraps an error with the pipeline stage it came from.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error(stage + ": " + what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace lire
