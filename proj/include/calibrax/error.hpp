#pragma once

#include <stdexcept>
#include <string>

namespace calibrax {

enum class ErrorKind {
    config,       // bad user input or inconsistent dimensions
    solver,       // QP did not reach a usable status
    below_level,  // requested accuracy not certifiable
    io,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline Error config_error(const std::string& msg) { return Error(ErrorKind::config, msg); }

}  // namespace calibrax
