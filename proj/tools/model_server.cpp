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

// Reference model server speaking the framed predictor protocol over
// stdin/stdout (default) or TCP. It stands in for trained networks in
// integration tests and documents the server side of the protocol.
//
//   mitopipe-model-server --mode darkness
//   mitopipe-model-server --mode const --value 0.5 --tcp 5555

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <iostream>
#include <thread>

#include "mitopipe/external.hpp"
#include "mitopipe/protocol.hpp"

namespace {

using namespace mitopipe;

struct Options {
  std::string mode = "darkness";
  double value = 0.5;
  int die_after = -1;
  int delay_ms = 0;
  int tcp_port = -1;
};

// Darker (more stained) pixels are more likely mitotic.
double darkness(const std::uint8_t* p) {
  const double mean = (p[0] + p[1] + p[2]) / 3.0;
  return std::clamp((170.0 - mean) / 100.0, 0.0, 1.0);
}

std::vector<std::uint8_t> answer(const protocol::Request& req, const Options& opt) {
  const auto& img = req.image;
  if (opt.mode == "error") return protocol::encode_error_response(req.kind, 7, "model refused the input");
  if (opt.mode == "bad-magic") {
    auto frame = req.kind == protocol::Kind::seg
                     ? protocol::encode_seg_response(ProbabilityMap(img.width(), img.height(), 0.5))
                     : protocol::encode_cls_response(0.5);
    frame[0] = 'X';
    return frame;
  }
  if (req.kind == protocol::Kind::seg) {
    ProbabilityMap map(img.width(), img.height(), opt.value);
    if (opt.mode == "darkness") {
      for (std::size_t i = 0; i < img.pixel_count(); ++i) map.data()[i] = darkness(img.pixel(i).data());
    } else if (opt.mode == "wrong-size") {
      map = ProbabilityMap(img.width() + 1, img.height(), opt.value);
    }
    return protocol::encode_seg_response(map);
  }
  double score = opt.value;
  if (opt.mode == "darkness") {
    // Mean darkness of the central 16x16 block.
    const auto cx = img.width() / 2, cy = img.height() / 2;
    double sum = 0.0;
    int n = 0;
    for (auto y = std::max<std::int64_t>(0, cy - 8); y < std::min(img.height(), cy + 8); ++y) {
      for (auto x = std::max<std::int64_t>(0, cx - 8); x < std::min(img.width(), cx + 8); ++x) {
        const std::uint8_t p[3] = {img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)};
        sum += darkness(p);
        ++n;
      }
    }
    score = n ? sum / n : 0.0;
  }
  return protocol::encode_cls_response(score);
}

int serve(protocol::Channel& ch, const Options& opt) {
  for (int served = 0;; ++served) {
    if (opt.die_after >= 0 && served >= opt.die_after) return 0;
    protocol::Request req;
    try {
      req = protocol::read_request(ch);
    } catch (const ProtocolError& e) {
      std::cerr << "model-server: " << e.what() << "\n";
      return 2;
    } catch (const Error&) {
      return 0;  // peer closed
    }
    if (opt.delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(opt.delay_ms));
    ch.write_all(answer(req, opt));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference model server for the mitopipe predictor protocol"};
  Options opt;
  app.add_option("--mode", opt.mode, "darkness | const | bad-magic | error | wrong-size")
      ->check(CLI::IsMember({"darkness", "const", "bad-magic", "error", "wrong-size"}));
  app.add_option("--value", opt.value, "Constant probability / score")->check(CLI::Range(0.0, 1.0));
  app.add_option("--die-after", opt.die_after, "Exit after serving this many requests");
  app.add_option("--delay-ms", opt.delay_ms, "Sleep before each response");
  app.add_option("--tcp", opt.tcp_port, "Listen on this TCP port instead of stdin/stdout");
  CLI11_PARSE(app, argc, argv);

  try {
    if (opt.tcp_port < 0) {
      external::FdChannel ch(STDIN_FILENO, STDOUT_FILENO, std::chrono::hours(24), false);
      return serve(ch, opt);
    }
    const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
    int one = 1;
    ::setsockopt(listener, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(opt.tcp_port));
    if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listener, 8) != 0) {
      std::perror("model-server: bind/listen");
      return 1;
    }
    for (;;) {
      const int fd = ::accept(listener, nullptr, nullptr);
      if (fd < 0) continue;
      std::thread([fd, opt] {
        external::FdChannel ch(fd, fd, std::chrono::hours(24), true);
        serve(ch, opt);
      }).detach();
    }
  } catch (const std::exception& e) {
    std::cerr << "model-server: " << e.what() << "\n";
    return 1;
  }
}
