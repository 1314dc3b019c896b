#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "deskbot/fsm/fsm.hpp"
#include "deskbot/hub/protocol.hpp"
#include "deskbot/nlu/nlu.hpp"

namespace deskbot::hub {

Message Ack(const Message& request, Json body = Json::object());
Message ErrorReply(const std::optional<std::string>& id, std::string_view code, const std::string& detail);

// Turns text into a bound command.
class IntentService {
 public:
  virtual ~IntentService() = default;
  virtual nlu::IntentResult Interpret(const std::string& text) = 0;
};

class LocalIntentService : public IntentService {
 public:
  explicit LocalIntentService(nlu::Pipeline pipeline) : pipeline_(std::move(pipeline)) {}
  nlu::IntentResult Interpret(const std::string& text) override;

 private:
  nlu::Pipeline pipeline_;
};

// Talks to an `nlu-serve` process over the framed TCP protocol. Calls block.
class RemoteIntentService : public IntentService {
 public:
  RemoteIntentService(const std::string& host, uint16_t port);
  ~RemoteIntentService() override;
  nlu::IntentResult Interpret(const std::string& text) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

nlu::IntentResult IntentResultFromJson(const Json& j);

struct Session {
  bool ready = false;
};

// What a server hosts: request handling plus an optional tick loop.
class Service {
 public:
  virtual ~Service() = default;
  virtual std::vector<Message> Handle(Session& session, const Message& request) = 0;
  // Advances one tick; returned messages go to every ready session.
  virtual std::vector<Message> Tick() { return {}; }
  virtual std::optional<Message> Telemetry() const { return std::nullopt; }
};

// Handshake and the checks every service shares. Returns a reply when the
// request was answered here.
std::optional<Message> Preflight(Session& session, const Message& request);

// The authoritative robot runtime. Not thread-safe: the server calls it from
// a single context.
class HubCore : public Service {
 public:
  HubCore(fsm::Machine& machine, IntentService& intents) : machine_(machine), intents_(intents) {}

  std::vector<Message> Handle(Session& session, const Message& request) override;
  std::vector<Message> Tick() override;
  std::optional<Message> Telemetry() const override;

  const fsm::Machine& machine() const { return machine_; }

 private:
  fsm::Machine& machine_;
  IntentService& intents_;
};

// Remote half of the split: answers INTENT_TEXT with the parsed intent.
class NluService : public Service {
 public:
  explicit NluService(IntentService& intents) : intents_(intents) {}
  std::vector<Message> Handle(Session& session, const Message& request) override;

 private:
  IntentService& intents_;
};

// Outgoing frames for one client. Control replies are never dropped;
// telemetry beyond the cap is.
class OutboundQueue {
 public:
  explicit OutboundQueue(size_t telemetry_cap = 64) : cap_(telemetry_cap) {}

  void PushControl(std::string frame) { control_.push_back(std::move(frame)); }
  // False when the frame was dropped.
  bool PushTelemetry(std::string frame);
  // Control first.
  std::optional<std::string> Pop();
  bool empty() const { return control_.empty() && telemetry_.empty(); }
  size_t dropped() const { return dropped_; }

 private:
  size_t cap_;
  std::deque<std::string> control_;
  std::deque<std::string> telemetry_;
  size_t dropped_ = 0;
};

// Reads DESKBOT_LOG (trace, debug, info, warn, error, critical, off).
void InitLogging();

}  // namespace deskbot::hub
