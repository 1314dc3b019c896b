#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "deskbot/common/config.hpp"
#include "deskbot/common/error.hpp"

namespace deskbot::hub {

inline constexpr int kProtocolVersion = 1;
inline constexpr size_t kMaxPayload = size_t{1} << 20;

// Known message types; anything else parses but is answered with ERROR.
bool IsKnownType(std::string_view type);
// Types a client may send.
bool IsRequestType(std::string_view type);

struct Message {
  std::string type;
  std::optional<std::string> id;
  Json body = Json::object();

  Json ToJson() const;
  // Throws ProtocolError when "type" is missing or a field has the wrong kind.
  static Message FromJson(const Json& j, size_t offset = 0);
  bool operator==(const Message&) const = default;
};

class ProtocolError : public Error {
 public:
  ProtocolError(const std::string& message, size_t offset, bool fatal)
      : Error(ErrorCode::kProtocol, message + " at byte " + std::to_string(offset)),
        offset_(offset),
        fatal_(fatal) {}

  size_t offset() const { return offset_; }
  // The stream cannot be resynchronized after a fatal error.
  bool fatal() const { return fatal_; }

 private:
  size_t offset_;
  bool fatal_;
};

std::string EncodePayload(const Message& m);
// 4-byte big-endian payload length, then the UTF-8 JSON payload.
std::string EncodeFrame(const Message& m);
// Parses one WebSocket text payload; `offset` is only used in errors.
Message DecodePayload(std::string_view payload, size_t offset = 0);

// Incremental decoder for a byte stream of frames. Offsets in errors count
// bytes from the start of the stream.
class FrameDecoder {
 public:
  void Feed(std::string_view bytes);
  // Next complete message, or nullopt if more bytes are needed. A malformed
  // payload is consumed before the error is thrown; an oversize length is
  // fatal and leaves the decoder broken.
  std::optional<Message> Next();
  bool broken() const { return broken_; }
  size_t buffered() const { return buffer_.size() - start_; }

 private:
  std::string buffer_;
  size_t start_ = 0;
  size_t consumed_ = 0;  // stream offset of buffer_[start_]
  bool broken_ = false;
};

}  // namespace deskbot::hub
