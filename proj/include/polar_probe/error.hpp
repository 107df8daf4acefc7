#pragma once

#include <stdexcept>
#include <string>

namespace polar {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text (CoNLL-U, JSON headers). Carries the 1-based line when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Head assignment that does not form a single-rooted tree.
class TreeError : public Error {
public:
    TreeError(const std::string& sentence_id, const std::string& what)
        : Error("sentence " + sentence_id + ": " + what), sentence_id_(sentence_id) {}
    const std::string& sentence_id() const noexcept { return sentence_id_; }

private:
    std::string sentence_id_;
};

/// On-disk artifact inconsistent with its declared layout.
class ValidationError : public Error {
public:
    ValidationError(const std::string& field, const std::string& what)
        : Error(field + ": " + what), field_(field) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

/// Zero-norm vector where a direction is required.
class DegenerateVectorError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss, gradient or weight.
class NumericError : public Error {
public:
    using Error::Error;
};

class AlignmentError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace polar
