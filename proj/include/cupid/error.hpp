#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cupid {

enum class ErrorKind {
    format,     // bad magic, version, truncated record
    schema,     // dimension mismatch and friends
    data,       // invalid values inside well-formed containers
    not_found,
    argument,
    capacity,
    io,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::format: return "format";
        case ErrorKind::schema: return "schema";
        case ErrorKind::data: return "data";
        case ErrorKind::not_found: return "not_found";
        case ErrorKind::argument: return "argument";
        case ErrorKind::capacity: return "capacity";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace cupid
