#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace recall {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedLf : public Error {
 public:
  MalformedLf(std::size_t position, const std::string& what)
      : Error("malformed logical form at " + std::to_string(position) + ": " + what), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class GrammarError : public Error {
 public:
  using Error::Error;
};

class NotDerivable : public Error {
 public:
  using Error::Error;
};

class AmbiguousDerivation : public Error {
 public:
  using Error::Error;
};

class InvalidAction : public Error {
 public:
  explicit InvalidAction(std::size_t step)
      : Error("action at step " + std::to_string(step) + " is not applicable"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class IncompleteTree : public Error {
 public:
  IncompleteTree() : Error("action sequence ends with an open frontier") {}
};

class EmptyUtterance : public Error {
 public:
  EmptyUtterance() : Error("utterance has no tokens") {}
};

class NoApplicableActions : public Error {
 public:
  NoApplicableActions() : Error("no applicable actions at this decoding step") {}
};

class ParseTimeout : public Error {
 public:
  explicit ParseTimeout(std::size_t steps)
      : Error("decoding did not finish within " + std::to_string(steps) + " steps") {}
};

class InsufficientPoints : public Error {
 public:
  InsufficientPoints(std::size_t k, std::size_t n)
      : Error("requested " + std::to_string(k) + " clusters over " + std::to_string(n) + " points") {}
};

class EmptyMemory : public Error {
 public:
  EmptyMemory() : Error("no memory instances to estimate Fisher information from") {}
};

class MalformedRecord : public Error {
 public:
  MalformedRecord(std::size_t line, const std::string& what)
      : Error("malformed record at line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace recall
