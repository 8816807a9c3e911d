#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace fccausal {

// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Raised when a backend cannot provide what an operation requires
// (e.g. logits from a text-only adapter).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  CapacityError(const std::string& what, std::size_t budget)
      : Error(what), budget_(budget) {}
  std::size_t budget() const { return budget_; }

 private:
  std::size_t budget_;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NamingError : public Error {
 public:
  using Error::Error;
};

class AggregationError : public Error {
 public:
  using Error::Error;
};

// All-equal input where a range is required; carries the constant.
class DegenerateInputError : public Error {
 public:
  DegenerateInputError(const std::string& what, double value)
      : Error(what), value_(value) {}
  double value() const { return value_; }

 private:
  double value_;
};

class SchemaError : public Error {
 public:
  SchemaError(const std::string& what, std::string field, std::size_t line)
      : Error(what), field_(std::move(field)), line_(line) {}
  const std::string& field() const { return field_; }
  std::size_t line() const { return line_; }

 private:
  std::string field_;
  std::size_t line_;
};

// Wraps (via std::throw_with_nested) a failure during an intervention
// scan with the input and target it happened on.
class InterventionError : public Error {
 public:
  InterventionError(const std::string& what, std::string input_id, std::optional<int> layer)
      : Error(what), input_id_(std::move(input_id)), layer_(layer) {}
  const std::string& input_id() const { return input_id_; }
  std::optional<int> layer() const { return layer_; }

 private:
  std::string input_id_;
  std::optional<int> layer_;
};

class RunError : public Error {
 public:
  using Error::Error;
};

}  // namespace fccausal
