// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ccm {

// Argument outside the mathematical domain of an operation (angles, positions, radii).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Malformed configuration, dataset, checkpoint or scene description.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A numerical routine could not produce a usable result (singular system, NaN loss, ...).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace ccm
