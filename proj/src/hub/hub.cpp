#include "deskbot/hub/hub.hpp"

#include <cstdlib>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/read.hpp>
#include <boost/asio/write.hpp>
#include <spdlog/spdlog.h>

namespace deskbot::hub {

namespace asio = boost::asio;
using asio::ip::tcp;

Message Ack(const Message& request, Json body) { return {"ACK", request.id, std::move(body)}; }

Message ErrorReply(const std::optional<std::string>& id, std::string_view code, const std::string& detail) {
  return {"ERROR", id, {{"code", code}, {"message", detail}}};
}

nlu::IntentResult LocalIntentService::Interpret(const std::string& text) {
  return pipeline_.Run(nlu::MakeUtterance(text));
}

nlu::IntentResult IntentResultFromJson(const Json& j) {
  nlu::IntentResult r;
  if (j.contains("intent") && !j.at("intent").is_null()) r.intent = j.at("intent").get<std::string>();
  r.confidence = j.value("confidence", 0.0);
  r.slots = j.value("slots", nlu::Slots{});
  r.command = nlu::Command::FromJson(j.at("command"));
  r.error = j.value("error", "");
  return r;
}

struct RemoteIntentService::Impl {
  asio::io_context io;
  tcp::socket socket{io};
  FrameDecoder decoder;
  uint64_t next_id = 0;

  void Send(const Message& m) { asio::write(socket, asio::buffer(EncodeFrame(m))); }

  Message Await(const std::string& id) {
    for (;;) {
      while (auto m = decoder.Next()) {
        if (m->id == id) return *m;
      }
      std::array<char, 4096> chunk{};
      const size_t n = socket.read_some(asio::buffer(chunk));
      decoder.Feed({chunk.data(), n});
    }
  }

  Message Call(Message m) {
    m.id = "nlu-" + std::to_string(next_id++);
    Send(m);
    return Await(*m.id);
  }
};

RemoteIntentService::RemoteIntentService(const std::string& host, uint16_t port)
    : impl_(std::make_unique<Impl>()) {
  try {
    tcp::resolver resolver(impl_->io);
    asio::connect(impl_->socket, resolver.resolve(host, std::to_string(port)));
    const Message reply = impl_->Call({"HELLO", std::nullopt, {{"protocol_version", kProtocolVersion}}});
    if (reply.type != "ACK") throw Error(ErrorCode::kProtocol, "nlu service refused HELLO");
  } catch (const boost::system::system_error& e) {
    throw Error(ErrorCode::kIo, "cannot reach nlu service at " + host + ":" + std::to_string(port) +
                                    ": " + e.what());
  }
}

RemoteIntentService::~RemoteIntentService() = default;

nlu::IntentResult RemoteIntentService::Interpret(const std::string& text) {
  try {
    const Message reply = impl_->Call({"INTENT_TEXT", std::nullopt, {{"text", text}}});
    if (reply.type != "ACK") {
      throw Error(ErrorCode::kProtocol, "nlu service error: " + reply.body.value("message", ""));
    }
    return IntentResultFromJson(reply.body.at("result"));
  } catch (const boost::system::system_error& e) {
    throw Error(ErrorCode::kIo, std::string("nlu service connection lost: ") + e.what());
  }
}

std::optional<Message> Preflight(Session& session, const Message& request) {
  if (!IsKnownType(request.type) || !IsRequestType(request.type)) {
    return ErrorReply(request.id, "unsupported", "unsupported message type " + request.type);
  }
  if (request.type == "HELLO") {
    const Json& v = request.body.contains("protocol_version") ? request.body.at("protocol_version") : Json();
    if (!v.is_number_integer() || v.get<int>() != kProtocolVersion) {
      return ErrorReply(request.id, "version", "protocol_version must be " + std::to_string(kProtocolVersion));
    }
    session.ready = true;
    return Ack(request, {{"protocol_version", kProtocolVersion}, {"server", "deskbot"}});
  }
  if (!session.ready) return ErrorReply(request.id, "not-ready", "send HELLO first");
  return std::nullopt;
}

std::vector<Message> HubCore::Handle(Session& session, const Message& request) {
  if (auto early = Preflight(session, request)) return {*early};
  const auto& type = request.type;
  try {
    if (type == "INTENT_TEXT") {
      const auto text = request.body.at("text").get<std::string>();
      const auto result = intents_.Interpret(text);
      bool dispatched = false;
      if (result.error.empty()) {
        machine_.Dispatch(result.command);
        dispatched = true;
      }
      spdlog::info("intent '{}' -> {}", text, result.ToJson().dump());
      return {Ack(request, {{"result", result.ToJson()}, {"dispatched", dispatched}})};
    }
    if (type == "COMMAND") {
      machine_.Dispatch(nlu::Command::FromJson(request.body));
      return {Ack(request)};
    }
    if (type == "SET_VAR") {
      machine_.SetVar(request.body.at("name").get<std::string>(), request.body.at("value"));
      return {Ack(request)};
    }
    if (type == "GET_STATE") return {{"STATE", request.id, machine_.Telemetry()}};
    if (type == "ESTOP") {
      machine_.EmergencyStop();
      spdlog::warn("ESTOP requested at tick {}", machine_.tick());
      return {Ack(request, {{"tick", machine_.tick()}})};
    }
  } catch (const Error& e) {
    const bool rejected = e.code() == ErrorCode::kRejected;
    return {ErrorReply(request.id, rejected ? "rejected" : "invalid-argument", e.what())};
  } catch (const Json::exception& e) {
    return {ErrorReply(request.id, "invalid-argument", e.what())};
  }
  return {ErrorReply(request.id, "unsupported", "unsupported message type " + type)};
}

std::vector<Message> HubCore::Tick() {
  if (const auto rec = machine_.Tick()) {
    spdlog::debug("tick {}: {} -> {} ({})", rec->tick, rec->from, rec->to, rec->guard);
  }
  std::vector<Message> out;
  for (auto& alert : machine_.TakeAlerts()) out.push_back({"ALERT", std::nullopt, std::move(alert)});
  return out;
}

std::optional<Message> HubCore::Telemetry() const {
  return Message{"TELEMETRY", std::nullopt, machine_.Telemetry()};
}

std::vector<Message> NluService::Handle(Session& session, const Message& request) {
  if (auto early = Preflight(session, request)) return {*early};
  if (request.type != "INTENT_TEXT") {
    return {ErrorReply(request.id, "unsupported", "this endpoint only interprets text")};
  }
  try {
    const auto result = intents_.Interpret(request.body.at("text").get<std::string>());
    return {Ack(request, {{"result", result.ToJson()}})};
  } catch (const Json::exception& e) {
    return {ErrorReply(request.id, "invalid-argument", e.what())};
  }
}

bool OutboundQueue::PushTelemetry(std::string frame) {
  if (telemetry_.size() >= cap_) {
    ++dropped_;
    return false;
  }
  telemetry_.push_back(std::move(frame));
  return true;
}

std::optional<std::string> OutboundQueue::Pop() {
  auto& q = control_.empty() ? telemetry_ : control_;
  if (q.empty()) return std::nullopt;
  std::string front = std::move(q.front());
  q.pop_front();
  return front;
}

void InitLogging() {
  const char* env = std::getenv("DESKBOT_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
}

}  // namespace deskbot::hub
