#pragma once

#include <stdexcept>
#include <string>

namespace fedra {

// Contract violations: bad shapes, bad arguments, infeasible requests.
// Everything derives from std::runtime_error so callers can catch broadly.

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct PreconditionError : std::runtime_error {
    explicit PreconditionError(const std::string& msg)
        : std::runtime_error("precondition violated: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct InfeasibleError : std::runtime_error {
    explicit InfeasibleError(const std::string& msg) : std::runtime_error("infeasible: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

// Training produced a non-finite loss; carries round/client/step context.
struct DivergenceError : std::runtime_error {
    int round = -1;
    int client = -1;
    int step = -1;
    DivergenceError(const std::string& msg, int round_, int client_, int step_)
        : std::runtime_error("divergence: " + msg + " (round " + std::to_string(round_) +
                             ", client " + std::to_string(client_) + ", step " +
                             std::to_string(step_) + ")"),
          round(round_),
          client(client_),
          step(step_) {}
};

// Broken internal invariant, i.e. a bug rather than bad input.
struct InternalError : std::logic_error {
    explicit InternalError(const std::string& msg)
        : std::logic_error("internal invariant violated: " + msg) {}
};

}  // namespace fedra
