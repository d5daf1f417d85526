#include "ivgen/teleop_server.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <deque>

namespace ivgen::teleop {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, SessionConfig session,
             const ServerConfig& server, std::uint64_t id)
      : ws_(std::move(socket)),
        timer_(ws_.get_executor()),
        session_(std::move(session)),
        server_(server),
        id_(id) {}

  void start() {
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().set_option(tcp::no_delay(true), ec);
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec) return self->log("accept failed: " + ec.message());
      self->ws_.text(true);
      self->send(self->session_.hello());
      self->read();
      self->next_tick_ = std::chrono::steady_clock::now();
      self->schedule();
    });
  }

 private:
  void log(const std::string& m) const {
    if (server_.log) server_.log("session " + std::to_string(id_) + ": " + m);
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec,
                                                        std::size_t) {
      self->on_read(ec);
    });
  }

  void on_read(beast::error_code ec) {
    if (ec) {
      if (session_.episode_active()) {
        log("client disconnected mid-episode " +
            std::to_string(session_.episode()) + "; episode discarded");
      }
      session_.disconnect();
      finish();
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    const Reply r = session_.handle_message(text);
    if (r.text) send(*r.text);
    if (r.close) {
      log("closing: " + r.close_reason);
      close_ = websocket::close_reason(
          static_cast<websocket::close_code>(r.close_code), r.close_reason);
      session_.disconnect();
      timer_.cancel();
      flush();
      return;
    }
    read();
  }

  void schedule() {
    next_tick_ += server_.tick;
    timer_.expires_at(next_tick_);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->done_ || self->close_) return;
      self->on_tick();
      self->schedule();
    });
  }

  void on_tick() {
    if (!session_.handshaken()) return;
    TickOutput out = session_.tick();
    for (std::string& m : out.messages) send(std::move(m));
    if (out.finished) {
      try {
        if (!server_.output.empty()) {
          append_episode(server_.output, server_.session.task.id,
                         *out.finished);
        }
        log("episode recorded, goal=" +
            std::string(out.finished->goal ? "true" : "false") + ", " +
            std::to_string(out.finished->steps.size()) + " steps");
        if (server_.on_episode) server_.on_episode(*out.finished);
      } catch (const std::exception& e) {
        log(std::string("recording failed: ") + e.what());
      }
    }
  }

  void send(std::string text) {
    if (done_) return;
    queue_.push_back(std::move(text));
    if (!writing_) flush();
  }

  void flush() {
    if (done_ || writing_) return;
    if (queue_.empty()) {
      if (close_ && !closing_) {
        closing_ = true;
        ws_.async_close(*close_, [self = shared_from_this()](beast::error_code) {
          self->finish();
        });
      }
      return;
    }
    writing_ = true;
    ws_.async_write(asio::buffer(queue_.front()),
                    [self = shared_from_this()](beast::error_code ec,
                                                std::size_t) {
                      self->writing_ = false;
                      if (ec) return self->finish();
                      self->queue_.pop_front();
                      self->flush();
                    });
  }

  void finish() {
    done_ = true;
    timer_.cancel();
  }

  websocket::stream<beast::tcp_stream> ws_;
  asio::steady_timer timer_;
  beast::flat_buffer buffer_;
  Session session_;
  const ServerConfig& server_;
  std::uint64_t id_;
  std::deque<std::string> queue_;
  bool writing_ = false;
  bool done_ = false;
  bool closing_ = false;
  std::optional<websocket::close_reason> close_;
  std::chrono::steady_clock::time_point next_tick_;
};

}  // namespace

struct Server::Impl {
  explicit Impl(ServerConfig c)
      : config(std::move(c)),
        acceptor(ioc, tcp::endpoint(asio::ip::make_address(config.address),
                                    config.port)) {}

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      SessionConfig sc = config.session;
      sc.seed = derive_seed({config.session.seed, next_id});
      std::make_shared<Connection>(std::move(socket), std::move(sc), config,
                                   next_id++)
          ->start();
      accept();
    });
  }

  ServerConfig config;
  asio::io_context ioc;
  tcp::acceptor acceptor;
  std::uint64_t next_id = 0;
};

Server::Server(ServerConfig config)
    : impl_(std::make_unique<Impl>(std::move(config))) {
  impl_->config.session.task.validate();
  impl_->config.session.corruption.validate();
  if (impl_->config.tick.count() <= 0) {
    throw std::invalid_argument("tick must be positive");
  }
}

Server::~Server() = default;

unsigned short Server::port() const {
  return impl_->acceptor.local_endpoint().port();
}

void Server::run() {
  impl_->accept();
  impl_->ioc.run();
}

void Server::stop() {
  asio::post(impl_->ioc, [this] {
    beast::error_code ec;
    impl_->acceptor.close(ec);
    impl_->ioc.stop();
  });
}

}  // namespace ivgen::teleop
