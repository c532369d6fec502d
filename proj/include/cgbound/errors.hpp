#pragma once

#include <stdexcept>
#include <string>

namespace cgbound {

/// Error categories. The CLI maps them onto exit codes.
enum class ErrorKind {
  config,
  degenerate_map,
  tuning,
  occupancy,
  extrapolation,
  blow_up,
  step_size,
  box_too_small,
  grid_mismatch,
  incomplete_report,
  numerical,
  mode_unavailable,
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

/// Schema violation; carries the dotted field path, e.g. "physics.beta".
class ConfigError : public Error {
public:
  ConfigError(std::string field, const std::string& msg)
      : Error(ErrorKind::config, field + ": " + msg), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

private:
  std::string field_;
};

/// Non-finite state in a time stepper.
class BlowUpError : public Error {
public:
  BlowUpError(long step, double t, const std::string& msg)
      : Error(ErrorKind::blow_up, msg + " (step " + std::to_string(step) + ", t=" + std::to_string(t) + ")"),
        step_(step), t_(t) {}
  long step() const noexcept { return step_; }
  double time() const noexcept { return t_; }

private:
  long step_;
  double t_;
};

inline void require(bool ok, ErrorKind kind, const std::string& msg) {
  if (!ok) throw Error(kind, msg);
}

}  // namespace cgbound
