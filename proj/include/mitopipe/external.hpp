// Copyright 2026 The mitopipe Authors. All Rights Reserved.
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

/// @file external.hpp
/// @brief Predictors backed by an external model process (POSIX only).
///
/// Endpoints are strings:
///   exec:<shell command>   spawn the command, talk over its stdin/stdout
///   tcp:<host>:<port>      connect to a listening model server
///
/// One request is in flight per connection. A connection that saw a protocol
/// violation or a timeout is closed; later calls fail fast.

#pragma once

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <chrono>
#include <cstring>
#include <memory>
#include <string>
#include <thread>

#include "mitopipe/predictor.hpp"
#include "mitopipe/protocol.hpp"

extern char** environ;

namespace mitopipe::external {

using namespace std::chrono_literals;

inline constexpr std::chrono::milliseconds kDefaultTimeout = 30s;

namespace detail {

inline std::string errno_text(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}

/// Writes to a dead peer must surface as EPIPE, not kill the process.
inline void ignore_sigpipe() {
  static const bool done = [] {
    std::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)done;
}

}  // namespace detail

/// Channel over a pair of file descriptors (which may be the same socket).
class FdChannel : public protocol::Channel {
 public:
  FdChannel(int read_fd, int write_fd, std::chrono::milliseconds timeout, bool is_socket)
      : read_fd_(read_fd), write_fd_(write_fd), timeout_(timeout), socket_(is_socket) {}

  ~FdChannel() override { close_fds(); }

  FdChannel(const FdChannel&) = delete;
  FdChannel& operator=(const FdChannel&) = delete;

  void write_all(std::span<const std::uint8_t> bytes) override {
    std::size_t done = 0;
    while (done < bytes.size()) {
      const ssize_t n = socket_ ? ::send(write_fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL)
                                : ::write(write_fd_, bytes.data() + done, bytes.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorKind::inference, detail::errno_text("write to model failed"));
      }
      done += static_cast<std::size_t>(n);
    }
  }

  void read_exact(std::span<std::uint8_t> out) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    std::size_t done = 0;
    while (done < out.size()) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) {
        throw Error(ErrorKind::inference, "model timed out after " + std::to_string(timeout_.count()) + " ms");
      }
      pollfd pfd{read_fd_, POLLIN, 0};
      const int r = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorKind::inference, detail::errno_text("poll failed"));
      }
      if (r == 0) continue;
      const ssize_t n = ::read(read_fd_, out.data() + done, out.size() - done);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw Error(ErrorKind::inference, detail::errno_text("read from model failed"));
      }
      if (n == 0) throw Error(ErrorKind::inference, "model closed the connection");
      done += static_cast<std::size_t>(n);
    }
  }

 protected:
  void close_fds() {
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    read_fd_ = write_fd_ = -1;
  }

 private:
  int read_fd_;
  int write_fd_;
  std::chrono::milliseconds timeout_;
  bool socket_;
};

/// `/bin/sh -c command` with stdin/stdout piped to this channel. stderr is
/// inherited. The child is reaped on destruction.
class ChildProcessChannel final : public FdChannel {
 public:
  static std::unique_ptr<ChildProcessChannel> spawn(const std::string& command,
                                                    std::chrono::milliseconds timeout) {
    detail::ignore_sigpipe();
    int to_child[2], from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0) throw Error(ErrorKind::inference, detail::errno_text("pipe"));
    if (::pipe2(from_child, O_CLOEXEC) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw Error(ErrorKind::inference, detail::errno_text("pipe"));
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);
    std::string sh = "/bin/sh", flag = "-c", cmd = command;
    char* argv[] = {sh.data(), flag.data(), cmd.data(), nullptr};
    pid_t pid = -1;
    const int rc = ::posix_spawn(&pid, "/bin/sh", &actions, nullptr, argv, environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(to_child[0]);
    ::close(from_child[1]);
    if (rc != 0) {
      ::close(to_child[1]);
      ::close(from_child[0]);
      throw Error(ErrorKind::inference, "cannot spawn model '" + command + "': " + std::strerror(rc));
    }
    return std::unique_ptr<ChildProcessChannel>(
        new ChildProcessChannel(from_child[0], to_child[1], timeout, pid));
  }

  ~ChildProcessChannel() override {
    close_fds();  // EOF on stdin asks the model to exit
    for (int i = 0; i < 100; ++i) {
      if (::waitpid(pid_, nullptr, WNOHANG) != 0) return;
      std::this_thread::sleep_for(10ms);
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
  }

  pid_t pid() const { return pid_; }

 private:
  ChildProcessChannel(int read_fd, int write_fd, std::chrono::milliseconds timeout, pid_t pid)
      : FdChannel(read_fd, write_fd, timeout, false), pid_(pid) {}

  pid_t pid_;
};

inline std::unique_ptr<FdChannel> connect_tcp(const std::string& host, const std::string& port,
                                              std::chrono::milliseconds timeout) {
  detail::ignore_sigpipe();
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw Error(ErrorKind::inference, "cannot resolve " + host + ":" + port + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  std::string last = "no address";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    last = std::strerror(errno);
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw Error(ErrorKind::inference, "cannot connect to " + host + ":" + port + ": " + last);
  return std::make_unique<FdChannel>(fd, fd, timeout, true);
}

struct Endpoint {
  enum class Type { exec, tcp } type = Type::exec;
  std::string command;  // exec
  std::string host;     // tcp
  std::string port;     // tcp
  std::string spec;

  static Endpoint parse(const std::string& spec) {
    Endpoint e;
    e.spec = spec;
    if (spec.rfind("exec:", 0) == 0 && spec.size() > 5) {
      e.type = Type::exec;
      e.command = spec.substr(5);
      return e;
    }
    if (spec.rfind("tcp:", 0) == 0) {
      const auto rest = spec.substr(4);
      const auto colon = rest.rfind(':');
      if (colon != std::string::npos && colon > 0 && colon + 1 < rest.size()) {
        e.type = Type::tcp;
        e.host = rest.substr(0, colon);
        e.port = rest.substr(colon + 1);
        return e;
      }
    }
    throw Error(ErrorKind::invalid_config,
                "bad predictor endpoint '" + spec + "' (want exec:<command> or tcp:<host>:<port>)");
  }
};

inline std::unique_ptr<protocol::Channel> open_channel(const Endpoint& e, std::chrono::milliseconds timeout) {
  if (e.type == Endpoint::Type::exec) return ChildProcessChannel::spawn(e.command, timeout);
  return connect_tcp(e.host, e.port, timeout);
}

/// Shared request/response plumbing for both predictor kinds.
class Connection {
 public:
  Connection(Endpoint endpoint, std::chrono::milliseconds timeout)
      : endpoint_(std::move(endpoint)), channel_(open_channel(endpoint_, timeout)) {}

  Connection(std::string name, std::unique_ptr<protocol::Channel> channel)
      : channel_(std::move(channel)) {
    endpoint_.spec = std::move(name);
  }

  template <typename Fn>
  auto round_trip(Fn&& fn) {
    if (!channel_) throw Error(ErrorKind::inference, "connection to '" + endpoint_.spec + "' is closed");
    try {
      return fn(*channel_);
    } catch (const Error&) {
      channel_.reset();
      throw;
    }
  }

  const std::string& name() const { return endpoint_.spec; }
  bool open() const { return channel_ != nullptr; }

 private:
  Endpoint endpoint_;
  std::unique_ptr<protocol::Channel> channel_;
};

class ExternalSegPredictor final : public predict::SegPredictor {
 public:
  explicit ExternalSegPredictor(const std::string& endpoint,
                                std::chrono::milliseconds timeout = kDefaultTimeout)
      : conn_(Endpoint::parse(endpoint), timeout) {}
  ExternalSegPredictor(std::string name, std::unique_ptr<protocol::Channel> channel)
      : conn_(std::move(name), std::move(channel)) {}

  ProbabilityMap predict(const RgbImage& tile, const predict::TileContext&) override {
    return conn_.round_trip([&](protocol::Channel& ch) {
      ch.write_all(protocol::encode_request(protocol::Kind::seg, tile));
      return protocol::read_seg_response(ch, tile.width(), tile.height());
    });
  }
  std::string name() const override { return conn_.name(); }
  bool connected() const { return conn_.open(); }

 private:
  Connection conn_;
};

class ExternalClsPredictor final : public predict::ClsPredictor {
 public:
  explicit ExternalClsPredictor(const std::string& endpoint,
                                std::chrono::milliseconds timeout = kDefaultTimeout)
      : conn_(Endpoint::parse(endpoint), timeout) {}
  ExternalClsPredictor(std::string name, std::unique_ptr<protocol::Channel> channel)
      : conn_(std::move(name), std::move(channel)) {}

  double score(const RgbImage& patch, const predict::TileContext&) override {
    return conn_.round_trip([&](protocol::Channel& ch) {
      ch.write_all(protocol::encode_request(protocol::Kind::cls, patch));
      return protocol::read_cls_response(ch);
    });
  }
  std::string name() const override { return conn_.name(); }
  bool connected() const { return conn_.open(); }

 private:
  Connection conn_;
};

}  // namespace mitopipe::external
