#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

// Base class for every error the library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid static description of an object (model spec, population config, ...).
struct SpecError : Error {
    using Error::Error;
};

// A caller broke an operation precondition (shape mismatch, empty input, ...).
struct ContractError : Error {
    using Error::Error;
};

// Bad experiment configuration (unknown key, inconsistent fields, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Arithmetic produced a non-finite value; carries a short diagnostic payload.
struct NumericError : Error {
    std::string payload;
    NumericError(const std::string& what, std::string diagnostic)
        : Error(what), payload(std::move(diagnostic)) {}
};

// Value outside the mathematical domain of an operation.
struct DomainError : Error {
    using Error::Error;
};

// Degenerate input that makes the requested quantity meaningless.
struct DegenerateError : Error {
    using Error::Error;
};

// Profile versions do not match; comparing them would be meaningless.
struct StalenessError : Error {
    using Error::Error;
};

// Malformed byte stream.
struct FormatError : Error {
    using Error::Error;
};

// Weighted sampling cannot proceed (e.g. all weights zero).
struct SamplingError : Error {
    using Error::Error;
};

// Backend cannot perform a requested homomorphic operation.
struct CapabilityError : Error {
    using Error::Error;
};

}  // namespace fedsim
