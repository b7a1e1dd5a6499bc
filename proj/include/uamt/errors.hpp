// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace uamt {

/// Shape, alignment or parameter errors detected before any arithmetic runs.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A forward evaluation produced a non-finite value.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed dataset, label or checkpoint file.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A training step failed. Carries the loss term and step that broke.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::string term, long step, const std::string& what)
      : std::runtime_error(what), term_(std::move(term)), step_(step) {}

  const std::string& term() const noexcept { return term_; }
  long step() const noexcept { return step_; }

 private:
  std::string term_;
  long step_;
};

/// A pipeline stage failed; the message is prefixed with the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// An upstream artifact is missing or was produced under a different config.
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace uamt
