#pragma once

#include <stdexcept>
#include <string>

namespace splatdeform {

// Base for every error raised by the engine. `origin` names the module that
// raised it so the CLI and the service can surface it unchanged.
class Error : public std::runtime_error {
public:
    Error(std::string origin, const std::string& what)
        : std::runtime_error(what), origin_(std::move(origin)) {}

    const std::string& origin() const noexcept { return origin_; }

private:
    std::string origin_;
};

// Malformed input file (missing property, bad header, truncated body).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error("splat_model", what) {}
};

// Well-formed file carrying unusable values (NaN, infinities).
class DataError : public Error {
public:
    DataError(const std::string& what, std::size_t record)
        : Error("splat_model", what), record_(record) {}

    std::size_t record() const noexcept { return record_; }

private:
    std::size_t record_;
};

// Geometric precondition violated (empty region, degenerate triangle, ...).
class GeometryError : public Error {
public:
    using Error::Error;
};

// A linear system or eigenproblem could not be solved.
class NumericalError : public Error {
public:
    using Error::Error;
};

// User-supplied configuration or request is invalid. `field` is a JSON-style
// path to the offending value when one exists.
class ConfigError : public Error {
public:
    ConfigError(const std::string& what, std::string field = {})
        : Error("config", what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class Cancelled : public Error {
public:
    Cancelled() : Error("service", "operation cancelled") {}
};

}  // namespace splatdeform
