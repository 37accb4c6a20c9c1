#include "punchgrid/error.hpp"

#include <sodium.h>

#include "punchgrid/bytes.hpp"

namespace punchgrid {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::BadVersion: return "BadVersion";
    case ErrorCode::UnknownMsgType: return "UnknownMsgType";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::UnsupportedType: return "UnsupportedType";
    case ErrorCode::MalformedSchemaBlock: return "MalformedSchemaBlock";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::BindFailed: return "BindFailed";
    case ErrorCode::AddressInUse: return "AddressInUse";
    case ErrorCode::ConnectFailed: return "ConnectFailed";
    case ErrorCode::PeerClosed: return "PeerClosed";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::WorldFull: return "WorldFull";
    case ErrorCode::DuplicateRank: return "DuplicateRank";
    case ErrorCode::HolePunchFailed: return "HolePunchFailed";
    case ErrorCode::LockHeld: return "LockHeld";
    case ErrorCode::NotLockHolder: return "NotLockHolder";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::OutstandingRequests: return "OutstandingRequests";
    case ErrorCode::Finalized: return "Finalized";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnsupportedKeyType: return "UnsupportedKeyType";
    case ErrorCode::SchemaNameCollision: return "SchemaNameCollision";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::DivideByZero: return "DivideByZero";
    case ErrorCode::NoData: return "NoData";
    case ErrorCode::Cancelled: return "Cancelled";
    case ErrorCode::Deadlock: return "Deadlock";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

void raise_remote(std::string_view reply, std::string_view context) {
  std::string_view rest = reply.starts_with("ERR ") ? reply.substr(4) : reply;
  auto name = rest.substr(0, rest.find(' '));
  if (name.ends_with(':')) name.remove_suffix(1);
  for (int i = 0; i <= int(ErrorCode::Io); ++i) {
    if (name == to_string(ErrorCode(i))) fail(ErrorCode(i), std::string(context) + ": " + std::string(rest));
  }
  fail(ErrorCode::ProtocolError, std::string(context) + ": " + std::string(rest));
}

std::string base64_encode(ByteView data) {
  std::string out(sodium_base64_ENCODED_LEN(data.size(), sodium_base64_VARIANT_ORIGINAL), '\0');
  sodium_bin2base64(out.data(), out.size(), data.data(), data.size(), sodium_base64_VARIANT_ORIGINAL);
  out.resize(out.size() - 1);  // drop the terminating NUL
  return out;
}

Bytes base64_decode(std::string_view text) {
  Bytes out(text.size() / 4 * 3 + 3);
  std::size_t len = 0;
  if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr, &len, nullptr,
                        sodium_base64_VARIANT_ORIGINAL) != 0) {
    fail(ErrorCode::ProtocolError, "invalid base64");
  }
  out.resize(len);
  return out;
}

}  // namespace punchgrid
