#pragma once

#include <stdexcept>
#include <string>

namespace ltnode {

// Contract violations: the caller passed something the operation's
// preconditions forbid (bad shapes, unsorted times, negative rates, ...).
struct contract_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Shape mismatches get their own type so tests can tell them apart from
// other precondition failures.
struct shape_error : contract_error {
  using contract_error::contract_error;
};

// Numeric failure at runtime: non-finite values, overflow, divergence.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Step-count exhaustion and other iteration failures in the solver.
struct convergence_error : numeric_error {
  using numeric_error::numeric_error;
};

// Corrupt or inconsistent serialized artifacts.
struct integrity_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad experiment configuration (schema violations).
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem failures.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ltnode
