#pragma once

#include <stdexcept>
#include <string>

namespace fust {

// Raised when tensor shapes disagree; the message names the offending axes.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Raised when a caller violates an operation's precondition.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class IndexError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

// Division by a zero variance with no stabilizer.
class DivisionHazard : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// A loss or gradient became NaN/inf during training.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace fust
