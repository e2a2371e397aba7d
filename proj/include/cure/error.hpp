#ifndef CURE_ERROR_HPP
#define CURE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace cure {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can map the category onto a machine-readable message.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(message), category_(std::move(category)) {}

    [[nodiscard]] const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& message) : Error("numeric", message) {}
};

class GraphError : public Error {
public:
    explicit GraphError(const std::string& message) : Error("graph", message) {}
};

class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& message)
        : Error("config", key + ": " + message), key_(std::move(key)) {}

    [[nodiscard]] const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& message) : Error("io", message) {}
};

class InvalidArgument : public Error {
public:
    explicit InvalidArgument(const std::string& message) : Error("argument", message) {}
};

} // namespace cure

#endif // CURE_ERROR_HPP
