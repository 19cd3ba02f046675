#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mathlm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// latex_corpus
class InvalidLatex : public Error {
 public:
  using Error::Error;
};

class UnknownToken : public Error {
 public:
  UnknownToken(std::size_t position, std::string lexeme)
      : Error("unknown token '" + lexeme + "' at position " + std::to_string(position)),
        position_(position),
        lexeme_(std::move(lexeme)) {}

  std::size_t position() const { return position_; }
  const std::string& lexeme() const { return lexeme_; }

 private:
  std::size_t position_;
  std::string lexeme_;
};

class EmptySequence : public Error {
 public:
  EmptySequence() : Error("empty sequence") {}
};

class BadId : public Error {
 public:
  using Error::Error;
};

class TooFewSequences : public Error {
 public:
  using Error::Error;
};

// numeric_core
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class NotScalar : public Error {
 public:
  NotScalar() : Error("backward requires a scalar loss") {}
};

class DetachedGraph : public Error {
 public:
  DetachedGraph() : Error("loss does not depend on any tensor that requires grad") {}
};

class BadRate : public Error {
 public:
  using Error::Error;
};

class AllIgnored : public Error {
 public:
  AllIgnored() : Error("every target position is ignored") {}
};

class NonFinite : public Error {
 public:
  using Error::Error;
};

// models
class BadOrder : public Error {
 public:
  using Error::Error;
};

class OutOfRange : public Error {
 public:
  using Error::Error;
};

class SequenceTooLong : public Error {
 public:
  using Error::Error;
};

// training / evaluation
class EmptyCorpus : public Error {
 public:
  EmptyCorpus() : Error("empty corpus") {}
};

class UninitializedState : public Error {
 public:
  using Error::Error;
};

// reranker
class EmptyCandidates : public Error {
 public:
  using Error::Error;
};

class MissingTruth : public Error {
 public:
  using Error::Error;
};

class LengthMismatch : public Error {
 public:
  using Error::Error;
};

// persistence
class FormatError : public Error {
 public:
  using Error::Error;
};

class ChecksumMismatch : public FormatError {
 public:
  ChecksumMismatch() : FormatError("checkpoint checksum mismatch") {}
};

}  // namespace mathlm
