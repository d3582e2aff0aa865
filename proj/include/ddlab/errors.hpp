#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ddlab {

// Shapes of operands do not line up.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A token id, target or timestep is outside its valid range.
struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// A precondition of an operation was violated by the caller.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// A model or run configuration is internally inconsistent.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed input file. Carries the 1-based line number when one applies.
class ParseError : public std::runtime_error {
   public:
    ParseError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

   private:
    std::size_t line_;
};

}  // namespace ddlab
