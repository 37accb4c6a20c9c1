#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iostream>
#include <limits>
#include <thread>

#include <json.hpp>

#include "punchgrid/bench/bench.hpp"
#include "punchgrid/bootstrap/bootstrap.hpp"
#include "punchgrid/natsim/cluster.hpp"
#include "punchgrid/net/tcp.hpp"
#include "punchgrid/rendezvous/rendezvous.hpp"

extern char** environ;

namespace punchgrid::bench {

using nlohmann::json;

namespace {

json to_json(const ExperimentConfig& c) {
  return json{{"mode", to_string(c.mode)},
              {"rows", c.rows},
              {"world_sizes", c.world_sizes},
              {"iterations", c.iterations},
              {"repeats", c.repeats},
              {"unique_fraction", c.unique_fraction},
              {"seed", c.seed},
              {"transport", to_string(c.transport)}};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  c.mode = parse_mode(j.at("mode").get<std::string>());
  c.rows = j.at("rows").get<std::uint64_t>();
  c.world_sizes = j.at("world_sizes").get<std::vector<std::uint32_t>>();
  c.iterations = j.at("iterations").get<std::uint32_t>();
  c.repeats = j.at("repeats").get<std::uint32_t>();
  c.unique_fraction = j.at("unique_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.transport = parse_transport(j.at("transport").get<std::string>());
  return c;
}

json to_json(const TrialResult& t) {
  json records = json::array();
  for (const auto& r : t.records) {
    records.push_back({{"iteration", r.iteration},
                       {"join_ms", r.join_ms},
                       {"barrier_ms", r.barrier_ms},
                       {"com_init_ms", r.com_init_ms}});
  }
  return json{{"W", t.world_size}, {"trial", t.trial}, {"time_s", t.time_s}, {"join_rows", t.join_rows},
              {"records", records}};
}

TrialResult trial_from_json(const json& j) {
  TrialResult t;
  t.world_size = j.at("W").get<std::uint32_t>();
  t.trial = j.at("trial").get<std::uint32_t>();
  t.time_s = j.at("time_s").get<double>();
  t.join_rows = j.at("join_rows").get<std::uint64_t>();
  for (const auto& r : j.at("records")) {
    TimingRecord rec;
    rec.world_size = t.world_size;
    rec.trial = t.trial;
    rec.iteration = r.at("iteration").get<std::uint32_t>();
    rec.join_ms = r.at("join_ms").get<double>();
    rec.barrier_ms = r.at("barrier_ms").get<double>();
    rec.com_init_ms = r.at("com_init_ms").get<double>();
    t.records.push_back(rec);
  }
  return t;
}

// Workers report an Error as exit status kErrorExitBase + code.
constexpr int kErrorExitBase = 64;

ErrorCode exit_code_error(int status) {
  const int code = status - kErrorExitBase;
  if (code < 0 || code > static_cast<int>(ErrorCode::Io)) return ErrorCode::Io;
  return static_cast<ErrorCode>(code);
}

bootstrap::JobId job_for(std::uint32_t world_size) { return bootstrap::JobId("bench-w" + std::to_string(world_size)); }

std::string result_key(std::uint32_t trial) { return "result/" + std::to_string(trial); }

std::string utc_now() {
  const auto t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

const char* require_env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) fail(ErrorCode::InvalidArgument, std::string(name) + " is not set");
  return v;
}

/// kv and rendezvous servers on loopback, each on its own thread.
class LocalServers {
 public:
  LocalServers()
      : kv_transport_(std::make_shared<net::TcpTransport>(net::Ipv4::parse("127.0.0.1"))),
        rdv_transport_(std::make_shared<net::TcpTransport>(net::Ipv4::parse("127.0.0.1"))),
        kv_(kv_transport_, 0),
        rdv_(rdv_transport_, 0),
        kv_thread_([this](std::stop_token st) { kv_.run(st); }),
        rdv_thread_([this](std::stop_token st) { rdv_.run(st); }) {}

  net::Endpoint kv() const { return kv_.local(); }
  net::Endpoint rdv() const { return rdv_.local(); }

 private:
  std::shared_ptr<net::TcpTransport> kv_transport_;
  std::shared_ptr<net::TcpTransport> rdv_transport_;
  bootstrap::KvServer kv_;
  rendezvous::RendezvousServer rdv_;
  std::jthread kv_thread_;
  std::jthread rdv_thread_;
};

class Launcher {
 public:
  Launcher(const ExperimentConfig& config, const LaunchOptions& options) : config_(config), options_(options) {}

  LaunchReport run() {
    if (config_.transport == TransportKind::Tcp) {
      if (options_.worker_exe.empty()) fail(ErrorCode::InvalidArgument, "tcp transport needs a worker executable");
      servers_.emplace();
      client_transport_ = std::make_shared<net::TcpTransport>();
      store_.emplace(*client_transport_, servers_->kv());
    }
    for (std::uint32_t rep = 0; rep < config_.repeats; ++rep) {
      for (auto w : config_.world_sizes) run_one(w, rep);
    }
    try {
      report_.rows = aggregate(report_.trials, config_.world_sizes);
    } catch (const Error& e) {
      report_.failures.push_back(e.what());
    }
    if (!report_.rows.empty()) {
      try {
        report_.speedups = speedups(report_.rows);
      } catch (const Error& e) {
        // On natsim a single worker never touches the network, so its virtual
        // join time is zero and speedups are undefined rather than failed.
        if (e.code() != ErrorCode::DivideByZero) throw;
        log(std::string("speedup undefined: ") + e.what());
        const double nan = std::numeric_limits<double>::quiet_NaN();
        for (const auto& r : report_.rows) report_.speedups.push_back({r.world_size, nan, nan});
      }
    }
    report_.exit_status = report_.failures.empty() ? 0 : 1;
    emit();
    return std::move(report_);
  }

 private:
  void log(const std::string& line) {
    if (options_.log) *options_.log << line << std::endl;
  }

  void run_one(std::uint32_t w, std::uint32_t trial) {
    const auto label = "W=" + std::to_string(w) + " trial " + std::to_string(trial);
    log("running " + label);
    try {
      auto result = config_.transport == TransportKind::Tcp ? run_tcp(w, trial) : run_natsim(w, trial);
      log(label + ": " + std::to_string(result.time_s) + " s, " + std::to_string(result.join_rows) + " rows");
      report_.trials.push_back(std::move(result));
    } catch (const Error& e) {
      log(label + " failed: " + e.what());
      report_.failures.push_back(label + ": " + e.what());
    }
  }

  TrialResult run_natsim(std::uint32_t w, std::uint32_t trial) {
    // Every trial gets a fresh cluster, so its store starts empty.
    natsim::ClusterConfig cfg;
    cfg.world_size = w;
    cfg.job = job_for(w).str();
    cfg.network.record_trace = false;
    natsim::SimCluster cluster(cfg);
    std::optional<TrialResult> result;
    auto outcomes = cluster.run([&](comm::Communicator& c) {
      auto r = run_trial(c, config_, trial);
      if (r) result = std::move(r);
    });
    for (const auto& o : outcomes) {
      if (o.error) fail(*o.error, "worker " + (o.rank ? std::to_string(*o.rank) : std::string("?")) + ": " + o.error_text);
    }
    if (!result) fail(ErrorCode::NoData, "rank 0 reported nothing");
    return *result;
  }

  TrialResult run_tcp(std::uint32_t w, std::uint32_t trial) {
    const auto job = job_for(w);
    if (options_.clear_between_repeats) bootstrap::clear_job(*store_, job);

    json payload = to_json(config_);
    payload["world_size"] = w;
    payload["trial"] = trial;
    std::vector<pid_t> pids;
    for (std::uint32_t i = 0; i < w; ++i) {
      auto body = payload;
      body["launch_index"] = i;
      const auto text = body.dump();
      std::vector<std::string> env;
      for (char** e = environ; *e; ++e) {
        if (std::string_view(*e).rfind("PUNCHGRID_", 0) != 0) env.emplace_back(*e);
      }
      env.push_back("PUNCHGRID_JOB=" + job.str());
      env.push_back("PUNCHGRID_KV=" + servers_->kv().str());
      env.push_back("PUNCHGRID_RDV=" + servers_->rdv().str());
      env.push_back("PUNCHGRID_PAYLOAD=" + base64_encode(to_bytes(text)));
      std::vector<char*> envp;
      for (auto& s : env) envp.push_back(s.data());
      envp.push_back(nullptr);
      std::string exe = options_.worker_exe.string();
      std::string sub = "worker";
      char* argv[] = {exe.data(), sub.data(), nullptr};
      pid_t pid = 0;
      const int rc = posix_spawn(&pid, exe.c_str(), nullptr, nullptr, argv, envp.data());
      if (rc != 0) {
        for (auto p : pids) ::kill(p, SIGKILL);
        for (auto p : pids) ::waitpid(p, nullptr, 0);
        fail(ErrorCode::Io, "cannot spawn " + exe + ": " + std::strerror(rc));
      }
      pids.push_back(pid);
    }

    std::string bad;
    // A crash in one worker surfaces as PeerClosed or Timeout in the others,
    // so any other reported code is the more specific cause.
    std::optional<ErrorCode> cause;
    for (auto pid : pids) {
      int status = 0;
      while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
      }
      if (WIFEXITED(status) && WEXITSTATUS(status) == 0) continue;
      if (!bad.empty()) bad += ", ";
      if (WIFEXITED(status)) {
        const auto code = exit_code_error(WEXITSTATUS(status));
        bad += "pid " + std::to_string(pid) + " exited " + std::to_string(WEXITSTATUS(status)) + " (" +
               std::string(punchgrid::to_string(code)) + ")";
        if (!cause || (code != ErrorCode::PeerClosed && code != ErrorCode::Timeout)) cause = code;
      } else {
        bad += "pid " + std::to_string(pid) + " killed by signal " + std::to_string(WTERMSIG(status));
        if (!cause) cause = ErrorCode::PeerClosed;
      }
    }
    if (cause) fail(*cause, "worker failure: " + bad);

    auto stored = store_->get(job.key(result_key(trial)));
    if (!stored) fail(ErrorCode::NoData, "rank 0 stored no result");
    return trial_from_json(json::parse(punchgrid::to_string(*stored)));
  }

  void emit() {
    std::filesystem::create_directories(options_.out_dir);
    if (!report_.rows.empty()) {
      std::ofstream csv(options_.out_dir / "results.csv");
      write_results_csv(csv, config_.mode, report_.rows, report_.speedups);
      std::ofstream dat(options_.out_dir / "speedup.dat");
      write_plotdat(dat, report_.rows, report_.speedups);
    }
    json trials = json::array();
    for (const auto& t : report_.trials) trials.push_back(to_json(t));
    json meta{{"config", to_json(config_)},
              {"trial_time", "max over ranks per iteration, mean over iterations"},
              {"clock", config_.transport == TransportKind::Tcp ? "steady (wall)" : "virtual (network only)"},
              {"clear_between_repeats", options_.clear_between_repeats},
              {"hardware_concurrency", std::thread::hardware_concurrency()},
              {"written_at", utc_now()},
              {"trials", trials},
              {"failures", report_.failures}};
    std::ofstream(options_.out_dir / "run-metadata.json") << meta.dump(2) << '\n';
  }

  const ExperimentConfig& config_;
  const LaunchOptions& options_;
  std::optional<LocalServers> servers_;
  std::shared_ptr<net::TcpTransport> client_transport_;
  std::optional<bootstrap::KvClient> store_;
  LaunchReport report_;
};

}  // namespace

LaunchReport launch(const ExperimentConfig& config, const LaunchOptions& options) {
  config.validate();
  return Launcher(config, options).run();
}

int run_worker_from_env() {
  try {
    const bootstrap::JobId job(require_env("PUNCHGRID_JOB"));
    const auto kv = net::Endpoint::parse(require_env("PUNCHGRID_KV"));
    const auto rdv = net::Endpoint::parse(require_env("PUNCHGRID_RDV"));
    const auto payload = json::parse(punchgrid::to_string(base64_decode(require_env("PUNCHGRID_PAYLOAD"))));
    const auto config = config_from_json(payload);
    const auto world_size = payload.at("world_size").get<std::uint32_t>();
    const auto trial = payload.at("trial").get<std::uint32_t>();

    auto transport = std::make_shared<net::TcpTransport>();
    auto c = comm::comm_init(transport, job, kv, rdv, world_size);
    auto result = run_trial(*c, config, trial);
    if (result) {
      bootstrap::KvClient store(*transport, kv);
      store.set(job.key(result_key(trial)), to_bytes(to_json(*result).dump()));
      store.close();
    }
    c->finalize();
    return 0;
  } catch (const Error& e) {
    std::cerr << "punchgrid worker: " << e.what() << std::endl;
    return kErrorExitBase + static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "punchgrid worker: " << e.what() << std::endl;
    return 1;
  }
}

}  // namespace punchgrid::bench
