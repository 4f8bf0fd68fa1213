#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace progseg {

enum class ErrorCode {
  Shape,
  Contract,
  Data,
  Format,
  Config,
  Checkpoint,
  Io,
  Internal,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string msg)
      : std::runtime_error(std::move(msg)), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

struct ShapeError : Error {
  explicit ShapeError(std::string m) : Error(ErrorCode::Shape, std::move(m)) {}
};
struct ContractError : Error {
  explicit ContractError(std::string m) : Error(ErrorCode::Contract, std::move(m)) {}
};
struct DataError : Error {
  explicit DataError(std::string m) : Error(ErrorCode::Data, std::move(m)) {}
};
struct FormatError : Error {
  explicit FormatError(std::string m) : Error(ErrorCode::Format, std::move(m)) {}
};
struct ConfigError : Error {
  explicit ConfigError(std::string m) : Error(ErrorCode::Config, std::move(m)) {}
};
struct CheckpointError : Error {
  explicit CheckpointError(std::string m) : Error(ErrorCode::Checkpoint, std::move(m)) {}
};
struct IoError : Error {
  explicit IoError(std::string m) : Error(ErrorCode::Io, std::move(m)) {}
};

}  // namespace progseg
