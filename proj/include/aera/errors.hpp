#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace aera {

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<std::string> violations)
      : std::runtime_error(summarize(violations)), violations_(std::move(violations)) {}
  explicit ValidationError(const std::string& violation)
      : ValidationError(std::vector<std::string>{violation}) {}

  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  static std::string summarize(const std::vector<std::string>& v) {
    std::string out = "validation failed";
    for (const auto& s : v) out += "; " + s;
    return out;
  }
  std::vector<std::string> violations_;
};

// A row of an uploaded batch that cannot be decoded. Row numbers are 1-based
// over data rows (the CSV header is not counted).
class MalformedRowError : public ValidationError {
 public:
  MalformedRowError(std::size_t row, const std::string& what)
      : ValidationError("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotReadyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConflictError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NoGroundTruthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace aera
