#include "teleop_script.hpp"

#include "ivgen/datagen.hpp"
#include "ivgen/store.hpp"
#include "ivgen/teleop_server.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <doctest.h>
#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <mutex>
#include <thread>

using namespace ivgen;
using json = nlohmann::json;
namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

const TaskSpec kPeg = make_task(TaskId::planar_peg_insert);

struct Client {
  asio::io_context ioc;
  websocket::stream<tcp::socket> ws{ioc};

  explicit Client(unsigned short port) {
    ws.next_layer().connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
    ws.next_layer().set_option(tcp::no_delay(true));
    ws.handshake("127.0.0.1", "/");
    ws.text(true);
  }

  json read() {
    beast::flat_buffer buf;
    ws.read(buf);
    return json::parse(beast::buffers_to_string(buf.data()));
  }

  void send(const std::string& text) { ws.write(asio::buffer(text)); }
};

struct RunningServer {
  teleop::Server server;
  std::thread thread;
  std::mutex mutex;
  std::vector<std::string> logs;
  std::atomic<int> recorded{0};

  explicit RunningServer(teleop::ServerConfig config) : server(wire(std::move(config))) {
    thread = std::thread([this] { server.run(); });
  }
  ~RunningServer() {
    server.stop();
    thread.join();
  }

  teleop::ServerConfig wire(teleop::ServerConfig c) {
    c.log = [this](const std::string& m) {
      std::lock_guard<std::mutex> lock(mutex);
      logs.push_back(m);
    };
    c.on_episode = [this](const Trajectory&) { ++recorded; };
    return c;
  }

  bool logged(const std::string& needle) {
    for (int i = 0; i < 200; ++i) {
      {
        std::lock_guard<std::mutex> lock(mutex);
        for (const auto& l : logs) {
          if (l.find(needle) != std::string::npos) return true;
        }
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    return false;
  }
};

// Follows the frames with a local mirror of the world, takes over after the
// policy's first contact and steers with oracle actions until the episode
// ends. Returns false if a frame disagrees with the mirror, which would mean
// an action missed its tick.
bool takeover_and_steer(Client& c, const PolicyModel& policy, std::uint64_t session_seed,
                        int episode, bool& contact) {
  teleop_script::Mirror world(kPeg, CorruptionModel::peg_noise(), session_seed, episode);
  DeltaAction sent;
  bool human_next = false;
  contact = false;
  for (;;) {
    const json m = c.read();
    if (m["type"] == "episode_end") {
      // Control outlives the episode; hand it back before the next one.
      if (human_next) c.send(R"({"type":"release"})");
      return true;
    }
    if (m["type"] != "frame") continue;
    const bool human = m["control"] == "human";
    if (human != human_next) {
      MESSAGE("control mismatch at " << m.dump());
      return false;
    }
    const DeltaAction applied =
        human ? sent : policy.act(observe(kPeg, world.s, world.z, Role::robot));
    const StepResult r = world.apply(applied);
    if (m["scene"]["step"] != world.s.step_count) {
      MESSAGE("step mismatch at " << m["scene"]["step"] << " vs " << world.s.step_count);
      return false;
    }
    for (const json& shape : m["scene"]["shapes"]) {
      if (shape["id"] == "ee" && (shape["x"].get<double>() != world.s.ee.position.x() ||
                                  shape["y"].get<double>() != world.s.ee.position.y())) {
        MESSAGE("ee mismatch at step " << world.s.step_count << ": " << shape.dump() << " vs "
                << world.s.ee.position.transpose() << " applied " << applied.translation.transpose()
                << " grip " << int(applied.gripper) << " human " << human);
        return false;
      }
    }
    if (!human && r.contact && !contact) {
      contact = true;
      c.send(R"({"type":"takeover"})");
      human_next = true;
    }
    if (human_next && !world.done()) {
      sent = teleop_script::as_sent(world.oracle());
      c.send(teleop_script::action_message(sent));
    }
  }
}

}  // namespace

TEST_CASE("scripted client takes over, steers, and the file feeds the generator") {
  const auto path = std::filesystem::temp_directory_path() / "ivgen_test_server.jsonl";
  std::filesystem::remove(path);

  const Dataset demos = collect_demos(kPeg, CorruptionModel::peg_noise(), 4, 1);
  const PolicyModel policy = PolicyModel::fit(demos, kPeg, FitConfig{});

  teleop::ServerConfig cfg;
  cfg.port = 0;
  cfg.tick = std::chrono::milliseconds(25);
  cfg.output = path;
  cfg.session.policy = policy;
  cfg.session.seed = 17;

  {
    RunningServer running(cfg);
    const unsigned short port = running.server.port();
    REQUIRE(port != 0);

    {
      Client c(port);
      const json hello = c.read();
      CHECK(hello["type"] == "hello");
      CHECK(hello["version"] == teleop::kProtocolVersion);
      c.send(R"({"type":"hello","version":1})");
      const std::uint64_t session_seed = derive_seed({17, 0});
      for (int episode = 0; episode < 2; ++episode) {
        bool contact = false;
        REQUIRE(takeover_and_steer(c, policy, session_seed, episode, contact));
        CHECK(contact);
      }
      c.ws.close(websocket::close_code::normal);
    }
    for (int i = 0; i < 200 && running.recorded < 2; ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    CHECK(running.recorded == 2);

    {  // disconnect mid-episode discards the episode
      {
        Client c(port);
        c.read();
        c.send(R"({"type":"hello","version":1})");
        for (int frames = 0; frames < 3;) {
          if (c.read()["type"] == "frame") ++frames;
        }
        beast::error_code ec;
        c.ws.next_layer().shutdown(tcp::socket::shutdown_both, ec);
        c.ws.next_layer().close(ec);
      }
      CHECK(running.logged("episode discarded"));
      CHECK(running.recorded == 2);
    }
    {  // version mismatch closes with code 4000
      Client c(port);
      c.read();
      c.send(R"({"type":"hello","version":99})");
      beast::error_code ec;
      beast::flat_buffer buf;
      c.ws.read(buf, ec);
      CHECK(ec == websocket::error::closed);
      CHECK(c.ws.reason().code == teleop::kVersionMismatchCode);
      CHECK(std::string(c.ws.reason().reason.c_str()).rfind("version-mismatch", 0) == 0);
    }
  }

  CHECK(validate(path).empty());
  const Dataset source = read_dataset(path);
  REQUIRE(source.episodes.size() == 2);
  for (const Trajectory& t : source.episodes) {
    CHECK(t.goal);
    const auto segs = segment(t, kPeg);
    REQUIRE(segs.size() == 2);
    CHECK(segs[0].actor == Actor::policy);
    CHECK(segs[1].actor == Actor::expert);
  }

  GenerateRequest req;
  req.n = 2;
  req.seed = 3;
  req.attempt_cap = 200;
  const GenerationResult gen = generate(kPeg, CorruptionModel::peg_noise(), &policy, source, req);
  CHECK(gen.dataset.episodes.size() == 2);
  const auto out = std::filesystem::temp_directory_path() / "ivgen_test_server_gen.jsonl";
  write_dataset(gen.dataset, out);
  CHECK(validate(out).empty());
  std::filesystem::remove(out);
  std::filesystem::remove(path);
}
