#pragma once

#include <stdexcept>
#include <string>

namespace deepafl {

/// Base error class. `kind()` is a stable machine-readable tag that the CLI
/// reports alongside the message (and maps to exit codes).
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(msg), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error("dimension", msg) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

struct SingularityError : Error {
    explicit SingularityError(const std::string& msg) : Error("singular", msg) {}
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& msg) : Error("validation", msg) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error("format", msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io", msg) {}
};

struct SnapshotError : Error {
    explicit SnapshotError(const std::string& msg) : Error("snapshot", msg) {}
};

struct ProtocolError : Error {
    explicit ProtocolError(const std::string& msg) : Error("protocol", msg) {}
};

struct OracleError : Error {
    explicit OracleError(const std::string& msg) : Error("oracle", msg) {}
};

} // namespace deepafl
