#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace meddcr {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- taxonomy ----

struct ParseError : Error {
  std::size_t line;
  ParseError(std::size_t line_, const std::string& reason)
      : Error("line " + std::to_string(line_) + ": " + reason), line(line_) {}
};

struct CycleError : Error {
  std::string code;
  explicit CycleError(const std::string& code_)
      : Error("cycle through code '" + code_ + "'"), code(code_) {}
};

struct DuplicateCode : Error {
  std::string code;
  explicit DuplicateCode(const std::string& code_)
      : Error("duplicate code '" + code_ + "'"), code(code_) {}
};

struct UnknownCode : Error {
  std::string code;
  explicit UnknownCode(const std::string& code_)
      : Error("unknown code '" + code_ + "'"), code(code_) {}
};

struct MalformedCode : Error {
  std::string text;
  MalformedCode(const std::string& text_, const std::string& reason)
      : Error("malformed code '" + text_ + "': " + reason), text(text_) {}
};

struct EmptyQuery : Error {
  EmptyQuery() : Error("empty query") {}
};

// ---- workflow IR ----

struct CompileError : Error {
  std::size_t step_index;
  std::string missing_type;
  CompileError(std::size_t step, const std::string& missing)
      : Error("step " + std::to_string(step) + ": no producer for input of type '" + missing + "'"),
        step_index(step),
        missing_type(missing) {}
};

// ---- llm gateway ----

struct ProviderUnavailable : Error {
  using Error::Error;
};

struct BudgetExceeded : Error {
  using Error::Error;
};

struct ScriptExhausted : Error {
  using Error::Error;
};

struct JsonIrrecoverable : Error {
  std::vector<std::string> attempts;
  JsonIrrecoverable(const std::string& reason, std::vector<std::string> attempts_)
      : Error(reason), attempts(std::move(attempts_)) {}
};

// ---- coding ops ----

struct MissingField : Error {
  std::string field;
  std::string code;
  MissingField(const std::string& field_, const std::string& code_)
      : Error("field '" + field_ + "' not populated for code '" + code_ + "'"),
        field(field_),
        code(code_) {}
};

// ---- agents ----

struct AllProposalsMalformed : Error {
  using Error::Error;
};

struct BuildExhausted : Error {
  std::vector<std::string> attempts;
  BuildExhausted(const std::string& reason, std::vector<std::string> attempts_)
      : Error(reason), attempts(std::move(attempts_)) {}
};

// ---- archive ----

struct InvalidSeed : Error {
  using Error::Error;
};

struct PersistError : Error {
  using Error::Error;
};

struct EmptyArchive : Error {
  EmptyArchive() : Error("archive is empty") {}
};

// ---- seeds ----

struct UnknownSeed : Error {
  using Error::Error;
};

struct ParamOutOfRange : Error {
  using Error::Error;
};

// ---- evaluation ----

struct LengthMismatch : Error {
  using Error::Error;
};

// ---- search ----

struct CorruptCheckpoint : Error {
  using Error::Error;
};

}  // namespace meddcr
