#pragma once

#include <stdexcept>
#include <string>

namespace ma3e {

// Bad arguments, malformed specs or configs. The CLI maps these to exit code 1.
class ValidationError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// File system and decoding failures, divergence. The CLI maps these to exit code 2.
class RuntimeFailure : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace ma3e
