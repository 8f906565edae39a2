#ifndef SCDD_ERROR_HPP
#define SCDD_ERROR_HPP

#include <stdexcept>
#include <string>

/**
 * @file error.hpp
 * @brief Exception types shared by every module.
 */

namespace scdd {

/**
 * @brief A caller broke a documented precondition (wrong arity, non-scalar output, impure checkpoint function...).
 */
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/**
 * @brief Tensor shapes do not line up for the requested operation.
 */
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/**
 * @brief A NaN or infinity appeared where a finite value is required.
 */
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * @brief Malformed input file; the message carries the path and line number.
 */
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * @brief Invalid configuration value; the message names the offending field.
 */
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/**
 * @brief Dataset content violates an operation's requirements (empty class, zero-total cell...).
 */
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * @brief Optimization diverged (NaN loss) during training or distillation.
 */
class TrainingFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}

#endif
