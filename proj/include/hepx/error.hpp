#pragma once
// Exception hierarchy shared by the library, the CLI and the HTTP service.
//
// Every error carries a short machine-readable code; the service maps the
// concrete type to an HTTP status.

#include <stdexcept>
#include <string>
#include <vector>

namespace hepx {

class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

// Value outside an attribute domain, unknown attribute, malformed proposal.
class SchemaError : public Error {
public:
    using Error::Error;
};

// Operation not allowed in the current session state.
class StateError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

// Cyclic rule dependency found while chaining.
class CycleError : public Error {
public:
    CycleError(const std::string& message, std::vector<std::string> rules)
        : Error("rule_cycle", message), rules_(std::move(rules)) {}

    const std::vector<std::string>& rules() const noexcept { return rules_; }

private:
    std::vector<std::string> rules_;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace hepx
