#pragma once

#include <stdexcept>
#include <string>

namespace owf {

// Thrown when an input record breaks a documented invariant (bad ranges,
// duplicate ids, inconsistent configs). The CLI maps it to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown when a file does not match the expected schema. Carries the record
// (line) number and the offending field so the message can point at both.
class ParseError : public ValidationError {
 public:
  ParseError(std::size_t record, const std::string& field, const std::string& what)
      : ValidationError("record " + std::to_string(record) + ", field '" + field + "': " + what),
        record_(record),
        field_(field) {}

  std::size_t record() const { return record_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t record_;
  std::string field_;
};

// Errors that come from the pipeline itself rather than from bad input.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace owf
