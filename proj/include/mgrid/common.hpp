#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace mgrid {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Configuration / input data problems (schema violations, bad parameter values).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A required message from a connected neighbor was not delivered.
class ProtocolError : public std::runtime_error {
public:
    explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

// Constraint tightening asked for more margin than the storage can provide.
class InfeasibleTighteningError : public std::runtime_error {
public:
    explicit InfeasibleTighteningError(const std::string& msg) : std::runtime_error(msg) {}
};

// Internal invariant broken at runtime (indicates a bug or a model violation).
class InvariantError : public std::logic_error {
public:
    explicit InvariantError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace mgrid
