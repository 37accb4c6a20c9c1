#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace punchgrid {

enum class ErrorCode {
  // wire
  BadMagic,
  BadVersion,
  UnknownMsgType,
  Truncated,
  UnsupportedType,
  MalformedSchemaBlock,
  LengthMismatch,
  // networking / coordination
  BindFailed,
  AddressInUse,
  ConnectFailed,
  PeerClosed,
  Timeout,
  WorldFull,
  DuplicateRank,
  HolePunchFailed,
  LockHeld,
  NotLockHolder,
  ProtocolError,
  // communicator
  SizeMismatch,
  OutstandingRequests,
  Finalized,
  InvalidArgument,
  // table
  UnsupportedKeyType,
  SchemaNameCollision,
  SchemaMismatch,
  // bench
  DivideByZero,
  NoData,
  // simulation
  Cancelled,
  Deadlock,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Library-wide exception. Every failure surfaced by punchgrid carries one of
/// the codes above so callers can branch on the condition rather than on text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) { throw Error(code, detail); }

/// Rethrows an "ERR <Code> detail" reply received from a server. Unknown codes
/// become ProtocolError.
[[noreturn]] void raise_remote(std::string_view reply, std::string_view context);

}  // namespace punchgrid
