#pragma once

#include <stdexcept>
#include <string>

namespace mef {

// Error categories map 1:1 onto CLI exit codes and C-API status values.
enum class ErrorCategory {
    config  = 2,
    data    = 3,
    numeric = 4,
    io      = 5,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory cat, const std::string& msg)
        : std::runtime_error(msg), category_(cat) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

[[noreturn]] inline void throw_config(const std::string& msg)  { throw Error(ErrorCategory::config, msg); }
[[noreturn]] inline void throw_data(const std::string& msg)    { throw Error(ErrorCategory::data, msg); }
[[noreturn]] inline void throw_numeric(const std::string& msg) { throw Error(ErrorCategory::numeric, msg); }
[[noreturn]] inline void throw_io(const std::string& msg)      { throw Error(ErrorCategory::io, msg); }

} // namespace mef
