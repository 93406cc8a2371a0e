#pragma once

#include <stdexcept>
#include <string>

namespace turnwise {

// Precondition violated by caller-supplied data.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A scoring call was missing a judge verdict for an eligible (t*, t) pair.
class IncompleteVerdicts : public std::runtime_error {
 public:
  IncompleteVerdicts(int gt_turn, int turn)
      : std::runtime_error("incomplete verdicts: no judge value for (t*=" + std::to_string(gt_turn) +
                           ", t=" + std::to_string(turn) + ")"),
        gt_turn_(gt_turn),
        turn_(turn) {}
  explicit IncompleteVerdicts(const std::string& what) : std::runtime_error("incomplete verdicts: " + what) {}
  int gt_turn() const { return gt_turn_; }
  int turn() const { return turn_; }

 private:
  int gt_turn_ = 0;
  int turn_ = 0;
};

class ModeMismatch : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class TemplateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Network-level failure: connection refused, timeout, non-2xx status.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContextOverflow : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a backend asks for a frame or query beyond the current turn.
class CausalityViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace turnwise
