#pragma once

#include <array>
#include <chrono>
#include <deque>
#include <functional>
#include <optional>
#include <thread>

#include <boost/asio.hpp>

#include "deskbot/common/rng.hpp"
#include "deskbot/hub/hub.hpp"
#include "deskbot/hub/server.hpp"

namespace deskbot::testing {

namespace asio = boost::asio;
using asio::ip::tcp;
using hub::FrameDecoder;
using hub::Message;
using hub::Server;
using hub::ServerConfig;
using hub::Service;
using namespace std::chrono_literals;

inline Message Req(std::string type, std::string id, Json body = Json::object()) {
  return {std::move(type), std::move(id), std::move(body)};
}

inline Message Hello(std::string id = "h") { return Req("HELLO", std::move(id), {{"protocol_version", 1}}); }

// Random JSON value of bounded depth with valid UTF-8 strings.
inline Json RandomJson(Rng& rng, int depth) {
  const auto kind = rng.Below(depth > 0 ? 7 : 5);
  auto text = [&] {
    std::string s;
    const auto n = rng.Below(12);
    for (uint64_t i = 0; i < n; ++i) {
      const auto pick = rng.Below(5);
      if (pick == 0) {
        s += "\xc3\xa9";  // e-acute
      } else if (pick == 1) {
        s += static_cast<char>(rng.Below(32));  // control characters need escaping
      } else {
        s += static_cast<char>(32 + rng.Below(95));
      }
    }
    return s;
  };
  switch (kind) {
    case 0: return nullptr;
    case 1: return rng.Bernoulli(0.5);
    case 2: return static_cast<int64_t>(rng.NextU64() >> 1) * (rng.Bernoulli(0.5) ? 1 : -1);
    case 3: return rng.Normal(0, 1e3);
    case 4: return text();
    case 5: {
      Json a = Json::array();
      for (uint64_t i = 0, n = rng.Below(4); i < n; ++i) a.push_back(RandomJson(rng, depth - 1));
      return a;
    }
    default: {
      Json o = Json::object();
      for (uint64_t i = 0, n = rng.Below(4); i < n; ++i) o[text()] = RandomJson(rng, depth - 1);
      return o;
    }
  }
}

// Blocking test client with timeouts.
class Client {
 public:
  explicit Client(uint16_t port) { socket_.connect({asio::ip::address_v4::loopback(), port}); }

  void Send(const Message& m) { SendRaw(EncodeFrame(m)); }
  void SendRaw(std::string_view bytes) { asio::write(socket_, asio::buffer(bytes.data(), bytes.size())); }

  // First message matching `pred`; earlier non-matching ones are discarded.
  std::optional<Message> WaitFor(const std::function<bool(const Message&)>& pred,
                                 std::chrono::milliseconds timeout = 3000ms) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      while (!inbox_.empty()) {
        Message m = std::move(inbox_.front());
        inbox_.pop_front();
        if (pred(m)) return m;
      }
      const auto left = deadline - std::chrono::steady_clock::now();
      if (left <= 0ms || !Pump(std::chrono::duration_cast<std::chrono::milliseconds>(left))) return std::nullopt;
    }
  }

  std::optional<Message> Reply(const std::string& id) {
    return WaitFor([&](const Message& m) { return m.id == id; });
  }

  bool Closed() {
    for (int i = 0; i < 50 && !closed_; ++i) Pump(100ms);
    return closed_;
  }

 private:
  bool Pump(std::chrono::milliseconds budget) {
    if (closed_) return false;
    bool done = false;
    boost::system::error_code ec;
    size_t n = 0;
    socket_.async_read_some(asio::buffer(chunk_), [&](const boost::system::error_code& e, size_t k) {
      ec = e;
      n = k;
      done = true;
    });
    io_.restart();
    io_.run_for(budget);
    if (!done) {
      socket_.cancel();
      io_.restart();
      io_.run();
      if (!n) return false;
    }
    if (ec && !n) {
      closed_ = true;
      return false;
    }
    decoder_.Feed({chunk_.data(), n});
    while (auto m = decoder_.Next()) inbox_.push_back(std::move(*m));
    return true;
  }

  asio::io_context io_;
  tcp::socket socket_{io_};
  std::array<char, 8192> chunk_{};
  FrameDecoder decoder_;
  std::deque<Message> inbox_;
  bool closed_ = false;
};

// Runs a server on a background io thread; the service must only be
// inspected after Shutdown().
class LiveServer {
 public:
  LiveServer(Service& service, ServerConfig config) : server_(io_, service, config) {
    server_.Start();
    thread_ = std::thread([this] { io_.run(); });
  }
  ~LiveServer() { Shutdown(); }

  void Shutdown() {
    if (!thread_.joinable()) return;
    server_.Stop();
    guard_.reset();
    io_.stop();
    thread_.join();
  }

  uint16_t tcp() const { return server_.tcp_port(); }
  uint16_t ws() const { return server_.ws_port(); }

 private:
  asio::io_context io_;
  asio::executor_work_guard<asio::io_context::executor_type> guard_ = asio::make_work_guard(io_);
  Server server_;
  std::thread thread_;
};

inline ServerConfig Ephemeral() {
  ServerConfig c;
  c.tcp_port = 0;
  c.ws_port = 0;
  return c;
}

}  // namespace deskbot::testing
