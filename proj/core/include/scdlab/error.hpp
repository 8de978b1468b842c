#pragma once

#include <stdexcept>
#include <string>

namespace scdlab {

// Bad inputs, shapes, or configuration. The CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Failures discovered while running (I/O, divergence). The CLI maps these to exit code 3.
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace scdlab
