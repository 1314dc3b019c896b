#include "deskbot/hub/server.hpp"

#include <array>
#include <chrono>
#include <list>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

namespace deskbot::hub {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using asio::ip::tcp;
using Clock = std::chrono::steady_clock;

namespace {

std::string LengthPrefixed(const std::string& payload) {
  const auto n = static_cast<uint32_t>(payload.size());
  std::string frame;
  frame.reserve(4 + payload.size());
  for (int shift : {24, 16, 8, 0}) frame.push_back(static_cast<char>((n >> shift) & 0xFF));
  return frame + payload;
}

}  // namespace

class Connection;

struct ServerState : std::enable_shared_from_this<ServerState> {
  ServerState(asio::io_context& io, Service& service, ServerConfig config)
      : io(io), service(service), config(std::move(config)), tcp_acceptor(io), ws_acceptor(io),
        tick_timer(io), telemetry_timer(io) {}

  void Open(tcp::acceptor& acceptor, uint16_t port, const char* what) {
    try {
      const tcp::endpoint ep(asio::ip::make_address(config.address), port);
      acceptor.open(ep.protocol());
      acceptor.set_option(asio::socket_base::reuse_address(true));
      acceptor.bind(ep);
      acceptor.listen();
    } catch (const boost::system::system_error& e) {
      throw Error(ErrorCode::kIo, std::string("cannot listen for ") + what + " on " + config.address + ":" +
                                      std::to_string(port) + ": " + e.what());
    }
  }

  void AcceptTcp();
  void AcceptWs();
  void ArmTick();
  void ArmTelemetry();
  void Broadcast(const Message& m, bool telemetry);
  void Stop();

  asio::io_context& io;
  Service& service;
  ServerConfig config;
  tcp::acceptor tcp_acceptor;
  tcp::acceptor ws_acceptor;
  asio::steady_timer tick_timer;
  asio::steady_timer telemetry_timer;
  Clock::time_point next_tick;
  Clock::time_point next_telemetry;
  std::list<std::weak_ptr<Connection>> connections;
  size_t dropped = 0;
  bool stopped = false;
};

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  explicit Connection(std::shared_ptr<ServerState> server) : server_(std::move(server)), out_(server_->config.telemetry_queue) {}
  virtual ~Connection() = default;

  virtual void Begin() = 0;
  virtual void Close() = 0;

  bool ready() const { return session_.ready; }

  void Deliver(const std::string& payload, bool telemetry) {
    if (closed_) return;
    if (telemetry) {
      if (!out_.PushTelemetry(Wrap(payload))) ++server_->dropped;
    } else {
      out_.PushControl(Wrap(payload));
    }
    Flush();
  }

 protected:
  virtual std::string Wrap(const std::string& payload) const = 0;
  virtual void WriteCurrent() = 0;

  void Serve(const Message& request) {
    for (const auto& reply : server_->service.Handle(session_, request)) Deliver(EncodePayload(reply), false);
  }

  void Flush() {
    if (writing_ || closed_) return;
    auto next = out_.Pop();
    if (!next) {
      if (closing_) Close();
      return;
    }
    current_ = std::move(*next);
    writing_ = true;
    WriteCurrent();
  }

  void OnWritten(const boost::system::error_code& ec) {
    writing_ = false;
    if (ec) {
      Close();
      return;
    }
    Flush();
  }

  // Sends what is queued, then closes.
  void CloseAfterFlush() {
    closing_ = true;
    if (!writing_) Flush();
  }

  std::shared_ptr<ServerState> server_;
  Session session_;
  OutboundQueue out_;
  std::string current_;
  bool writing_ = false;
  bool closing_ = false;
  bool closed_ = false;
};

namespace {

class TcpConnection : public Connection {
 public:
  TcpConnection(std::shared_ptr<ServerState> server, tcp::socket socket)
      : Connection(std::move(server)), socket_(std::move(socket)) {}

  void Begin() override { Read(); }

  void Close() override {
    if (closed_) return;
    closed_ = true;
    boost::system::error_code ignored;
    socket_.shutdown(tcp::socket::shutdown_both, ignored);
    socket_.close(ignored);
  }

 private:
  std::string Wrap(const std::string& payload) const override { return LengthPrefixed(payload); }

  void WriteCurrent() override {
    asio::async_write(socket_, asio::buffer(current_),
                      [self = shared_from_this(), this](const boost::system::error_code& ec, size_t) {
                        OnWritten(ec);
                      });
  }

  void Read() {
    socket_.async_read_some(asio::buffer(chunk_), [self = shared_from_this(), this](
                                                      const boost::system::error_code& ec, size_t n) {
      if (ec || closed_) {
        Close();
        return;
      }
      decoder_.Feed({chunk_.data(), n});
      for (;;) {
        try {
          auto m = decoder_.Next();
          if (!m) break;
          Serve(*m);
        } catch (const ProtocolError& e) {
          spdlog::info("protocol error from client: {}", e.what());
          Deliver(EncodePayload(ErrorReply(std::nullopt, "protocol", e.what())), false);
          if (e.fatal()) {
            CloseAfterFlush();
            return;
          }
        }
      }
      Read();
    });
  }

  tcp::socket socket_;
  std::array<char, 8192> chunk_{};
  FrameDecoder decoder_;
};

class WsConnection : public Connection {
 public:
  WsConnection(std::shared_ptr<ServerState> server, tcp::socket socket)
      : Connection(std::move(server)), ws_(std::move(socket)) {}

  void Begin() override {
    http::async_read(ws_.next_layer(), buffer_, request_,
                     [self = shared_from_this(), this](const boost::system::error_code& ec, size_t) {
                       if (ec) {
                         Close();
                         return;
                       }
                       if (!websocket::is_upgrade(request_) || request_.target() != "/ws") {
                         Reject();
                         return;
                       }
                       ws_.async_accept(request_, [self, this](const boost::system::error_code& ec2) {
                         if (ec2) {
                           Close();
                           return;
                         }
                         Read();
                       });
                     });
  }

  void Close() override {
    if (closed_) return;
    closed_ = true;
    boost::system::error_code ignored;
    ws_.next_layer().shutdown(tcp::socket::shutdown_both, ignored);
    ws_.next_layer().close(ignored);
  }

 private:
  std::string Wrap(const std::string& payload) const override { return payload; }

  void WriteCurrent() override {
    ws_.text(true);
    ws_.async_write(asio::buffer(current_),
                    [self = shared_from_this(), this](const boost::system::error_code& ec, size_t) {
                      OnWritten(ec);
                    });
  }

  void Reject() {
    auto res = std::make_shared<http::response<http::string_body>>(http::status::not_found, request_.version());
    res->set(http::field::content_type, "text/plain");
    res->body() = "websocket endpoint is /ws\n";
    res->prepare_payload();
    http::async_write(ws_.next_layer(), *res,
                      [self = shared_from_this(), this, res](const boost::system::error_code&, size_t) {
                        Close();
                      });
  }

  void Read() {
    buffer_.consume(buffer_.size());
    ws_.async_read(buffer_, [self = shared_from_this(), this](const boost::system::error_code& ec, size_t) {
      if (ec || closed_) {
        Close();
        return;
      }
      const std::string payload = beast::buffers_to_string(buffer_.data());
      try {
        if (payload.size() > kMaxPayload) throw ProtocolError("payload exceeds 1 MiB", 0, true);
        Serve(DecodePayload(payload));
      } catch (const ProtocolError& e) {
        Deliver(EncodePayload(ErrorReply(std::nullopt, "protocol", e.what())), false);
        if (e.fatal()) {
          CloseAfterFlush();
          return;
        }
      }
      Read();
    });
  }

  websocket::stream<tcp::socket> ws_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
};

}  // namespace

void ServerState::AcceptTcp() {
  tcp_acceptor.async_accept([self = shared_from_this()](const boost::system::error_code& ec, tcp::socket s) {
    if (self->stopped) return;
    if (!ec) {
      auto c = std::make_shared<TcpConnection>(self, std::move(s));
      self->connections.push_back(c);
      c->Begin();
    }
    self->AcceptTcp();
  });
}

void ServerState::AcceptWs() {
  ws_acceptor.async_accept([self = shared_from_this()](const boost::system::error_code& ec, tcp::socket s) {
    if (self->stopped) return;
    if (!ec) {
      auto c = std::make_shared<WsConnection>(self, std::move(s));
      self->connections.push_back(c);
      c->Begin();
    }
    self->AcceptWs();
  });
}

void ServerState::Broadcast(const Message& m, bool telemetry) {
  const std::string payload = EncodePayload(m);
  for (auto it = connections.begin(); it != connections.end();) {
    if (auto c = it->lock()) {
      if (c->ready()) c->Deliver(payload, telemetry);
      ++it;
    } else {
      it = connections.erase(it);
    }
  }
}

void ServerState::ArmTick() {
  next_tick += std::chrono::milliseconds(config.tick_ms);
  tick_timer.expires_at(next_tick);
  tick_timer.async_wait([self = shared_from_this()](const boost::system::error_code& ec) {
    if (ec || self->stopped) return;
    for (const auto& m : self->service.Tick()) self->Broadcast(m, false);
    self->ArmTick();
  });
}

void ServerState::ArmTelemetry() {
  next_telemetry += std::chrono::microseconds(static_cast<int64_t>(1e6 / config.telemetry_hz));
  telemetry_timer.expires_at(next_telemetry);
  telemetry_timer.async_wait([self = shared_from_this()](const boost::system::error_code& ec) {
    if (ec || self->stopped) return;
    if (auto t = self->service.Telemetry()) self->Broadcast(*t, true);
    self->ArmTelemetry();
  });
}

void ServerState::Stop() {
  if (stopped) return;
  stopped = true;
  boost::system::error_code ignored;
  tcp_acceptor.close(ignored);
  ws_acceptor.close(ignored);
  tick_timer.cancel();
  telemetry_timer.cancel();
  for (auto& w : connections) {
    if (auto c = w.lock()) c->Close();
  }
  connections.clear();
}

Server::Server(asio::io_context& io, Service& service, ServerConfig config)
    : impl_(std::make_shared<ServerState>(io, service, std::move(config))) {
  impl_->Open(impl_->tcp_acceptor, impl_->config.tcp_port, "tcp");
  if (impl_->config.websocket) impl_->Open(impl_->ws_acceptor, impl_->config.ws_port, "websocket");
}

Server::~Server() {
  // Handlers still queued on the io_context keep the state alive; they see stopped.
  asio::post(impl_->io, [impl = impl_] { impl->Stop(); });
}

uint16_t Server::tcp_port() const { return impl_->tcp_acceptor.local_endpoint().port(); }

uint16_t Server::ws_port() const {
  return impl_->config.websocket ? impl_->ws_acceptor.local_endpoint().port() : 0;
}

void Server::Start() {
  asio::post(impl_->io, [impl = impl_] {
    impl->AcceptTcp();
    if (impl->config.websocket) impl->AcceptWs();
    const auto now = Clock::now();
    impl->next_tick = now;
    impl->next_telemetry = now;
    if (impl->config.tick_ms > 0) impl->ArmTick();
    if (impl->config.telemetry_hz > 0) impl->ArmTelemetry();
    spdlog::info("listening on {}:{} (tcp){}", impl->config.address, impl->tcp_acceptor.local_endpoint().port(),
                 impl->config.websocket
                     ? fmt::format(", {}:{} (websocket /ws)", impl->config.address,
                                   impl->ws_acceptor.local_endpoint().port())
                     : std::string());
  });
}

void Server::Stop() {
  asio::post(impl_->io, [impl = impl_] { impl->Stop(); });
}

size_t Server::telemetry_dropped() const { return impl_->dropped; }

}  // namespace deskbot::hub
