#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace texgraph {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents. The message names every shape involved.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A caller-side precondition was violated (bad index, out-of-range n, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Invalid user configuration (unknown key, malformed value, bad fractions).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Raised by the finite-difference oracle when the function under test
/// produces a non-finite value.
class OracleError : public Error {
public:
    OracleError(const std::string& what, std::string coordinate)
        : Error(what), coordinate_(std::move(coordinate)) {}
    const std::string& coordinate() const noexcept { return coordinate_; }

private:
    std::string coordinate_;
};

class DatasetError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    enum class Kind { io, format, version, checksum, config_mismatch };

    CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace texgraph
