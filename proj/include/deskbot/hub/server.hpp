#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "deskbot/hub/hub.hpp"

namespace boost::asio {
class io_context;
}

namespace deskbot::hub {

struct ServerState;

struct ServerConfig {
  std::string address = "127.0.0.1";
  uint16_t tcp_port = 7462;  // 0 picks a free port
  bool websocket = true;
  uint16_t ws_port = 7463;
  double telemetry_hz = 20.0;  // 0 disables telemetry
  int tick_ms = 20;            // 0 disables the tick loop
  size_t telemetry_queue = 64;
};

// Hosts a Service on TCP and, optionally, WebSocket. Every handler runs on
// the io_context thread, so the service sees one request at a time.
class Server {
 public:
  // Binds immediately; throws Error(kIo) when a port is taken.
  Server(boost::asio::io_context& io, Service& service, ServerConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  uint16_t tcp_port() const;
  uint16_t ws_port() const;
  void Start();
  void Stop();
  size_t telemetry_dropped() const;

 private:
  std::shared_ptr<ServerState> impl_;
};

}  // namespace deskbot::hub
