#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cloudrm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Errors caused by bad inputs (files, flags, records) rather than runtime failure.
class InputError : public Error {
 public:
  using Error::Error;
};

class UnsupportedSymbol : public InputError {
 public:
  explicit UnsupportedSymbol(std::size_t position)
      : InputError("unsupported symbol at position " + std::to_string(position)), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class SequenceTooLong : public InputError {
 public:
  SequenceTooLong(std::size_t needed, std::size_t max)
      : InputError("sequence needs " + std::to_string(needed) + " tokens, max is " + std::to_string(max)),
        needed_(needed),
        max_(max) {}
  std::size_t needed() const noexcept { return needed_; }
  std::size_t max() const noexcept { return max_; }

 private:
  std::size_t needed_;
  std::size_t max_;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class MissingRewardPosition : public Error {
 public:
  MissingRewardPosition() : Error("sequence has no reward-read position") {}
};

class EmptyBatch : public Error {
 public:
  EmptyBatch() : Error("empty batch") {}
};

class NonFiniteInput : public Error {
 public:
  using Error::Error;
};

class EmptyCritiqueSpan : public Error {
 public:
  explicit EmptyCritiqueSpan(std::size_t index)
      : Error("sequence " + std::to_string(index) + " has an empty critique span"), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class NonFiniteGradient : public Error {
 public:
  using Error::Error;
};

class ParseFailure : public InputError {
 public:
  using InputError::InputError;
};

class ExhaustedResampling : public Error {
 public:
  explicit ExhaustedResampling(std::string prompt)
      : Error("could not draw a non-tied pair for prompt '" + prompt + "'"), prompt_(std::move(prompt)) {}
  const std::string& prompt() const noexcept { return prompt_; }

 private:
  std::string prompt_;
};

class SchemaViolation : public InputError {
 public:
  SchemaViolation(std::size_t line, std::string field, const std::string& what)
      : InputError("line " + std::to_string(line) + ": field '" + field + "': " + what),
        line_(line),
        field_(std::move(field)) {}
  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

class IoFailure : public InputError {
 public:
  using InputError::InputError;
};

class EmptyResponseSet : public Error {
 public:
  EmptyResponseSet() : Error("best-of-n needs at least one response") {}
};

class UnknownCategory : public InputError {
 public:
  explicit UnknownCategory(const std::string& category)
      : InputError("category '" + category + "' is not in the declared label set") {}
};

class MissingInput : public InputError {
 public:
  MissingInput(const std::string& stage, const std::string& path)
      : InputError("stage '" + stage + "' needs input '" + path + "'") {}
};

}  // namespace cloudrm
