#pragma once

#include <stdexcept>
#include <string>

namespace eabcal {

// Base class of every error raised by the library. The CLI catches this and
// prefixes the pipeline stage.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class SimulationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Raised when the ASMC proposal budget runs out; carries the partial fill.
class ProposalCapError : public Error {
public:
    ProposalCapError(const std::string& what, std::size_t accepted, std::size_t needed, double rho)
        : Error(what), accepted_(accepted), needed_(needed), rho_(rho) {}

    std::size_t accepted() const { return accepted_; }
    std::size_t needed() const { return needed_; }
    double rho() const { return rho_; }

private:
    std::size_t accepted_;
    std::size_t needed_;
    double rho_;
};

}  // namespace eabcal
