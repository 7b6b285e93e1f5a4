// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace sdrl {

/// Tensor or layout shapes that do not line up.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Inputs outside an operation's domain (bad ids, t outside (0,1], ...).
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Operation called in the wrong lifecycle state.
class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Configuration values that are individually valid but unusable together.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace sdrl
