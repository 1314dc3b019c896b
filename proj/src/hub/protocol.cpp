#include "deskbot/hub/protocol.hpp"

#include <array>
#include <algorithm>

namespace deskbot::hub {

namespace {

constexpr std::array<std::string_view, 11> kTypes{"HELLO",     "ACK",   "ERROR",     "INTENT_TEXT",
                                                  "COMMAND",   "SET_VAR", "GET_STATE", "STATE",
                                                  "TELEMETRY", "ESTOP", "ALERT"};
constexpr std::array<std::string_view, 6> kRequests{"HELLO",   "INTENT_TEXT", "COMMAND",
                                                    "SET_VAR", "GET_STATE",   "ESTOP"};

}  // namespace

bool IsKnownType(std::string_view type) {
  return std::find(kTypes.begin(), kTypes.end(), type) != kTypes.end();
}

bool IsRequestType(std::string_view type) {
  return std::find(kRequests.begin(), kRequests.end(), type) != kRequests.end();
}

Json Message::ToJson() const {
  Json j{{"type", type}, {"body", body}};
  if (id) j["id"] = *id;
  return j;
}

Message Message::FromJson(const Json& j, size_t offset) {
  if (!j.is_object()) throw ProtocolError("payload is not a JSON object", offset, false);
  const auto type = j.find("type");
  if (type == j.end() || !type->is_string()) {
    throw ProtocolError("missing string field \"type\"", offset, false);
  }
  Message m;
  m.type = type->get<std::string>();
  if (const auto id = j.find("id"); id != j.end() && !id->is_null()) {
    if (!id->is_string()) throw ProtocolError("field \"id\" must be a string", offset, false);
    m.id = id->get<std::string>();
  }
  if (const auto body = j.find("body"); body != j.end() && !body->is_null()) {
    if (!body->is_object()) throw ProtocolError("field \"body\" must be an object", offset, false);
    m.body = *body;
  }
  return m;
}

std::string EncodePayload(const Message& m) {
  std::string payload = m.ToJson().dump();
  if (payload.size() > kMaxPayload) throw ProtocolError("payload exceeds 1 MiB", 0, false);
  return payload;
}

std::string EncodeFrame(const Message& m) {
  const std::string payload = EncodePayload(m);
  const auto n = static_cast<uint32_t>(payload.size());
  std::string frame;
  frame.reserve(4 + payload.size());
  for (int shift : {24, 16, 8, 0}) frame.push_back(static_cast<char>((n >> shift) & 0xFF));
  frame += payload;
  return frame;
}

Message DecodePayload(std::string_view payload, size_t offset) {
  Json j;
  try {
    j = Json::parse(payload.begin(), payload.end());
  } catch (const Json::parse_error& e) {
    const size_t at = e.byte > 0 ? e.byte - 1 : 0;
    throw ProtocolError("malformed JSON", offset + at, false);
  }
  return Message::FromJson(j, offset);
}

void FrameDecoder::Feed(std::string_view bytes) {
  if (start_ > 0 && start_ == buffer_.size()) {
    buffer_.clear();
    start_ = 0;
  }
  buffer_.append(bytes);
}

std::optional<Message> FrameDecoder::Next() {
  if (broken_) throw ProtocolError("decoder is closed after a fatal error", consumed_, true);
  // Drop the consumed prefix once it dominates the buffer.
  if (start_ > 4096 && start_ * 2 > buffer_.size()) {
    buffer_.erase(0, start_);
    start_ = 0;
  }
  if (buffered() < 4) return std::nullopt;
  const auto* p = reinterpret_cast<const unsigned char*>(buffer_.data() + start_);
  const uint32_t n = (uint32_t{p[0]} << 24) | (uint32_t{p[1]} << 16) | (uint32_t{p[2]} << 8) | p[3];
  if (n > kMaxPayload) {
    broken_ = true;
    throw ProtocolError("declared length " + std::to_string(n) + " exceeds 1 MiB", consumed_, true);
  }
  if (buffered() < 4 + size_t{n}) return std::nullopt;
  const size_t payload_offset = consumed_ + 4;
  const std::string_view payload(buffer_.data() + start_ + 4, n);
  start_ += 4 + n;
  consumed_ += 4 + n;
  return DecodePayload(payload, payload_offset);
}

}  // namespace deskbot::hub
