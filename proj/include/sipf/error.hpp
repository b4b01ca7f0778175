#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace sipf {

enum class ErrorKind {
  invalid_argument,
  invalid_input,
  degenerate_geometry,
  degenerate_frame,
  coincident_point,
  numeric,
  sampler_stall,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::degenerate_geometry: return "degenerate-geometry";
    case ErrorKind::degenerate_frame: return "degenerate-frame";
    case ErrorKind::coincident_point: return "coincident-point";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::sampler_stall: return "sampler-stall";
  }
  return "unknown";
}

/// Library error. `index()` carries the offending point index when one applies.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what,
        std::optional<std::size_t> index = std::nullopt)
      : std::runtime_error(compose(kind, what, index)), kind_(kind), index_(index) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<std::size_t> index() const noexcept { return index_; }

  /// Same error with point index context attached.
  Error at(std::size_t index) const { return Error(kind_, message_only(), index); }

  /// what() without the kind prefix and point context.
  std::string message_only() const {
    std::string s = what();
    const auto colon = s.find(": ");
    if (colon != std::string::npos) s = s.substr(colon + 2);
    const auto ctx = s.rfind(" (point ");
    if (ctx != std::string::npos) s = s.substr(0, ctx);
    return s;
  }

 private:
  static std::string compose(ErrorKind kind, const std::string& what,
                             std::optional<std::size_t> index) {
    std::string s = std::string(to_string(kind)) + ": " + what;
    if (index) s += " (point " + std::to_string(*index) + ")";
    return s;
  }

  ErrorKind kind_;
  std::optional<std::size_t> index_;
};

}  // namespace sipf
