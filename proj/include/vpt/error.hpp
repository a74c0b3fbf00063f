#pragma once

#include <stdexcept>
#include <string>

namespace vpt {

// Root of every error raised by the library. Callers that only need a
// message can catch this; tests match on the concrete subclasses.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// A NaN or Inf appeared in a value that must stay finite.
class OverflowError : public Error {
public:
    using Error::Error;
};

// API called in the wrong order or with inconsistent arguments.
class UsageError : public Error {
public:
    using Error::Error;
};

class RangeError : public Error {
public:
    using Error::Error;
};

// Malformed on-disk input. The offending file is always part of the message.
class ParseError : public Error {
public:
    ParseError(const std::string &file, const std::string &what)
        : Error(file + ": " + what), file_(file) {}

    const std::string &file() const noexcept { return file_; }

private:
    std::string file_;
};

// Persisted artifacts disagree with their recorded hashes or with each other.
class IntegrityError : public Error {
public:
    using Error::Error;
};

} // namespace vpt
