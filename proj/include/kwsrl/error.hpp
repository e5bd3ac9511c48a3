#pragma once

#include <stdexcept>
#include <string>

namespace kwsrl {

// Every failure the library reports derives from Error. kind() is a short
// stable token the CLI prints in its machine-readable error line.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("config", m) {}
};

struct DatasetError : Error {
    explicit DatasetError(const std::string& m) : Error("dataset", m) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& m) : Error("format", m) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error("shape", m) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

struct IoError : Error {
    explicit IoError(const std::string& m) : Error("io", m) {}
};

struct LogicError : Error {
    explicit LogicError(const std::string& m) : Error("logic", m) {}
};

}  // namespace kwsrl
