#pragma once

#include <stdexcept>
#include <string>

namespace mgp {

// Error categories map to distinct failure modes surfaced by the CLI:
// shape (tensor/layer dimension mismatch), contract (precondition violated),
// parse (malformed file), numeric (non-finite values).
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(message), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class ContractError : public Error {
public:
    explicit ContractError(const std::string& message) : Error("contract", message) {}
};

class ParseError : public Error {
public:
    explicit ParseError(const std::string& message) : Error("parse", message) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& message) : Error("numeric", message) {}
};

}  // namespace mgp
