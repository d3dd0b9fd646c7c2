#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace colodiff {

// Error taxonomy used across the library. The CLI maps ParameterError to
// exit code 2 and NumericError/DivergenceError to exit code 3.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void concat_into(std::ostringstream&) {}

template <typename A, typename... Rest>
void concat_into(std::ostringstream& os, const A& a, Rest&&... rest) {
    os << a;
    concat_into(os, std::forward<Rest>(rest)...);
}

template <typename... Args>
std::string msg(Args&&... args) {
    std::ostringstream os;
    concat_into(os, std::forward<Args>(args)...);
    return os.str();
}

}  // namespace detail

template <typename... Args>
[[noreturn]] void throw_dim(Args&&... args) {
    throw DimensionError(detail::msg(std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void throw_param(Args&&... args) {
    throw ParameterError(detail::msg(std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void throw_contract(Args&&... args) {
    throw ContractError(detail::msg(std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void throw_numeric(Args&&... args) {
    throw NumericError(detail::msg(std::forward<Args>(args)...));
}

}  // namespace colodiff
