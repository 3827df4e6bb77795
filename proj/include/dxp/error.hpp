#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dxp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

/// Invalid synthetic-data or configuration specification.
class SpecError : public Error {
public:
    using Error::Error;
};

class StratificationError : public Error {
public:
    using Error::Error;
};

class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

class InvalidActionError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

/// Exhaustive enumeration would exceed its configured bound.
class SizeError : public Error {
public:
    using Error::Error;
};

/// Configuration error; `field` is the dotted path of the offending entry.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

}  // namespace dxp
