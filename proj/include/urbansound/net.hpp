// Copyright 2026 The urbansound Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal blocking TCP with line framing (POSIX sockets).

#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <string>
#include <utility>

#include "urbansound/common.hpp"

namespace urbansound::net {

class NetError : public Error {
 public:
  using Error::Error;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  int port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
};

inline Endpoint parse_endpoint(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon + 1 == text.size()) throw ConfigError("expected host:port");
  Endpoint e;
  e.host = std::string(text.substr(0, colon));
  if (e.host.empty()) e.host = "0.0.0.0";
  try {
    std::size_t used = 0;
    e.port = std::stoi(std::string(text.substr(colon + 1)), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("bad port in " + std::string(text));
  }
  if (e.port < 0 || e.port > 65535) throw ConfigError("port out of range");
  return e;
}

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  /// Unblocks readers on other threads without releasing the descriptor.
  void shutdown() const {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

  int local_port() const {
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) != 0) throw NetError("getsockname failed");
    return ntohs(addr.sin_port);
  }

 private:
  int fd_ = -1;
};

namespace detail {

inline sockaddr_in resolve(const Endpoint& e) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string host = e.host == "localhost" ? "127.0.0.1" : e.host;
  if (::getaddrinfo(host.c_str(), std::to_string(e.port).c_str(), &hints, &res) != 0 || !res)
    throw NetError("cannot resolve " + e.str());
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof addr);
  ::freeaddrinfo(res);
  return addr;
}

}  // namespace detail

inline Socket listen_tcp(const Endpoint& e, int backlog = 64) {
  const auto addr = detail::resolve(e);
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) throw NetError("socket failed");
  const int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
    throw NetError("cannot bind " + e.str() + ": " + std::strerror(errno));
  if (::listen(s.fd(), backlog) != 0) throw NetError("listen failed");
  return s;
}

inline Socket connect_tcp(const Endpoint& e, std::chrono::milliseconds timeout = std::chrono::seconds{5}) {
  const auto addr = detail::resolve(e);
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0));
  if (!s.valid()) throw NetError("socket failed");
  if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    if (errno != EINPROGRESS) throw NetError("connect " + e.str() + ": " + std::strerror(errno));
    pollfd p{s.fd(), POLLOUT, 0};
    if (::poll(&p, 1, static_cast<int>(timeout.count())) != 1) throw NetError("connect " + e.str() + ": timeout");
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) throw NetError("connect " + e.str() + ": " + std::strerror(err));
  }
  const int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

/// Accepts one connection, or nullopt after `timeout` (negative waits forever).
inline std::optional<Socket> accept_tcp(const Socket& listener, std::chrono::milliseconds timeout) {
  pollfd p{listener.fd(), POLLIN, 0};
  const int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
  if (r <= 0) return std::nullopt;
  const int fd = ::accept4(listener.fd(), nullptr, nullptr, SOCK_CLOEXEC);
  if (fd < 0) return std::nullopt;
  return Socket(fd);
}

inline void send_all(const Socket& s, std::string_view data) {
  while (!data.empty()) {
    pollfd p{s.fd(), POLLOUT, 0};
    if (::poll(&p, 1, 5000) != 1) throw NetError("send timeout");
    const auto n = ::send(s.fd(), data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw NetError(std::string("send failed: ") + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

enum class ReadStatus { Line, Timeout, Closed };

/// Buffered reader splitting a stream on '\n'; a trailing '\r' is stripped.
class LineReader {
 public:
  explicit LineReader(const Socket& s, std::size_t max_line = 1 << 20) : fd_(s.fd()), max_line_(max_line) {}

  ReadStatus read_line(std::string& out, std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        out.assign(buffer_, 0, nl);
        buffer_.erase(0, nl + 1);
        if (!out.empty() && out.back() == '\r') out.pop_back();
        return ReadStatus::Line;
      }
      if (buffer_.size() > max_line_) throw NetError("line too long");
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) return ReadStatus::Timeout;
      pollfd p{fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(left.count()));
      if (r == 0) return ReadStatus::Timeout;
      if (r < 0) {
        if (errno == EINTR) continue;
        return ReadStatus::Closed;
      }
      char chunk[4096];
      const auto n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n == 0) return ReadStatus::Closed;
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        return ReadStatus::Closed;
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  /// Bytes received after the last complete line.
  const std::string& pending() const { return buffer_; }

 private:
  int fd_;
  std::size_t max_line_;
  std::string buffer_;
};

}  // namespace urbansound::net
