#pragma once

#include "ivgen/teleop.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>

namespace ivgen::teleop {

struct ServerConfig {
  SessionConfig session;
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  std::chrono::microseconds tick{50'000};
  std::filesystem::path output;  // finished episodes are appended here
  std::function<void(const std::string&)> log;
  // Called on the server thread after each recorded episode.
  std::function<void(const Trajectory&)> on_episode;
};

// WebSocket server, one Session per connection. Connection i runs its
// episodes from seed derive_seed({session.seed, i}).
class Server {
 public:
  explicit Server(ServerConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  unsigned short port() const;
  // Blocks until stop() is called.
  void run();
  // Safe to call from any thread.
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ivgen::teleop
