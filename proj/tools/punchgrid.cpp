#include <unistd.h>

#include <climits>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "punchgrid/bench/bench.hpp"
#include "punchgrid/bootstrap/kv.hpp"
#include "punchgrid/natsim/cluster.hpp"
#include "punchgrid/net/tcp.hpp"
#include "punchgrid/rendezvous/rendezvous.hpp"

using namespace punchgrid;

namespace {

std::filesystem::path self_exe() {
  char buf[PATH_MAX];
  const auto n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
  if (n <= 0) fail(ErrorCode::Io, "cannot resolve /proc/self/exe");
  return std::string(buf, static_cast<std::size_t>(n));
}

std::vector<std::uint32_t> parse_world(const std::string& text) {
  std::vector<std::uint32_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || v == 0 || v > 1024) {
      fail(ErrorCode::InvalidArgument, "bad world size '" + item + "'");
    }
    out.push_back(static_cast<std::uint32_t>(v));
  }
  return out;
}

int serve_kv(const std::string& bind) {
  const auto ep = net::Endpoint::parse(bind);
  auto t = std::make_shared<net::TcpTransport>(ep.host);
  bootstrap::KvServer server(t, ep.port);
  std::cout << "kv listening on " << server.local().str() << std::endl;
  server.run();
  return 0;
}

int serve_rendezvous(const std::string& bind, double hold_s) {
  const auto ep = net::Endpoint::parse(bind);
  auto t = std::make_shared<net::TcpTransport>(ep.host);
  rendezvous::RendezvousServer server(
      t, ep.port, std::chrono::duration_cast<net::Duration>(std::chrono::duration<double>(hold_s)));
  std::cout << "rendezvous listening on " << server.local().str() << std::endl;
  server.run();
  return 0;
}

int natsim_demo(const std::string& a, const std::string& b, bool all_segments) {
  natsim::ClusterConfig cfg;
  cfg.world_size = 2;
  cfg.policies = {natsim::parse_policy(a), natsim::parse_policy(b)};
  natsim::SimCluster cluster(cfg);
  auto outcomes = cluster.run([](comm::Communicator& c) {
    const auto peer = 1 - c.rank();
    c.send(peer, 1, to_bytes("hello from rank " + std::to_string(c.rank())));
    const auto got = c.recv(peer, 1);
    std::cout << "rank " << c.rank() << " received \"" << to_string(got) << "\"\n";
  });

  std::cout << "time_ms kind   sent_src -> wire_dst  [wire_src]  result  note\n";
  for (const auto& e : cluster.network().trace()) {
    if (!all_segments && (e.kind == natsim::SegmentKind::Data || e.kind == natsim::SegmentKind::Ack)) continue;
    std::cout << std::fixed << std::setprecision(3)
              << std::chrono::duration<double, std::milli>(e.time).count() << ' ' << std::left << std::setw(7)
              << natsim::to_string(e.kind) << e.sent_src.str() << " -> " << e.wire_dst.str() << "  ["
              << e.wire_src.str() << "]  " << (e.result == natsim::DeliveryResult::Delivered ? "delivered" : "dropped")
              << (e.note.empty() ? "" : "  " + e.note) << '\n';
  }
  int status = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    std::cout << "worker " << i << " (" << a << "/" << b << "): ";
    if (o.error) {
      std::cout << "failed: " << o.error_text << '\n';
      status = 1;
    } else {
      std::cout << "rank " << *o.rank << " ok\n";
    }
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"punchgrid: hole-punched BSP communicator and join benchmark"};
  app.require_subcommand(1);

  std::string kv_bind = "0.0.0.0:7000";
  auto* kv_cmd = app.add_subcommand("kv-serve", "Run the coordination store");
  kv_cmd->add_option("--bind", kv_bind, "host:port to listen on")->capture_default_str();

  std::string rdv_bind = "0.0.0.0:7001";
  double hold_s = 60.0;
  auto* rdv_cmd = app.add_subcommand("rendezvous", "Run the rendezvous server");
  rdv_cmd->add_option("--bind", rdv_bind, "host:port to listen on")->capture_default_str();
  rdv_cmd->add_option("--hold-timeout", hold_s, "seconds a peer lookup waits for registration")
      ->capture_default_str();

  app.add_subcommand("worker", "Bench worker (spawned by `bench`; configured through PUNCHGRID_* variables)");

  auto config = bench::ExperimentConfig{};
  std::string mode = "strong";
  std::string world = "1,2,4";
  std::string transport = "tcp";
  std::string out_dir = "bench-out";
  bool paper_scale = false;
  bool no_clear = false;
  auto* bench_cmd = app.add_subcommand("bench", "Run the join scaling benchmark");
  bench_cmd->add_option("--mode", mode, "weak or strong")->check(CLI::IsMember({"weak", "strong"}))->capture_default_str();
  bench_cmd->add_option("--rows", config.rows, "rows per worker (weak) or in total (strong)")->capture_default_str();
  bench_cmd->add_option("--world", world, "comma-separated world sizes")->capture_default_str();
  bench_cmd->add_option("--it", config.iterations, "timed joins per trial")->capture_default_str();
  bench_cmd->add_option("--repeats", config.repeats, "trials per world size")->capture_default_str();
  bench_cmd->add_option("--unique", config.unique_fraction, "key domain as a fraction of rows*W")
      ->capture_default_str();
  bench_cmd->add_option("--seed", config.seed, "data generator seed")->capture_default_str();
  bench_cmd->add_option("--transport", transport, "tcp or natsim")
      ->check(CLI::IsMember({"tcp", "natsim"}))
      ->capture_default_str();
  bench_cmd->add_option("--out", out_dir, "output directory")->capture_default_str();
  bench_cmd->add_flag("--paper-scale", paper_scale, "9.1M/4.5M rows, W up to 64, it=10, repeats=4");
  bench_cmd->add_flag("--no-clear", no_clear, "skip clearing coordination keys between trials");

  std::string policy_a = "address-restricted";
  std::string policy_b = "address-restricted";
  bool all_segments = false;
  auto* demo_cmd = app.add_subcommand("natsim-demo", "Punch between two simulated NAT sites and print the trace");
  demo_cmd->add_option("--nat-a", policy_a, "full-cone, address-restricted or symmetric")->capture_default_str();
  demo_cmd->add_option("--nat-b", policy_b, "full-cone, address-restricted or symmetric")->capture_default_str();
  demo_cmd->add_flag("--all", all_segments, "include data and ack segments");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*kv_cmd) return serve_kv(kv_bind);
    if (*rdv_cmd) return serve_rendezvous(rdv_bind, hold_s);
    if (app.got_subcommand("worker")) return bench::run_worker_from_env();
    if (*demo_cmd) return natsim_demo(policy_a, policy_b, all_segments);
    if (*bench_cmd) {
      if (paper_scale) {
        const auto keep_seed = config.seed;
        config = bench::ExperimentConfig::paper_scale(bench::parse_mode(mode));
        config.seed = keep_seed;
      } else {
        config.mode = bench::parse_mode(mode);
        config.world_sizes = parse_world(world);
      }
      config.transport = bench::parse_transport(transport);
      bench::LaunchOptions options;
      options.out_dir = out_dir;
      options.worker_exe = self_exe();
      options.clear_between_repeats = !no_clear;
      options.log = &std::cerr;
      const auto report = bench::launch(config, options);
      for (const auto& f : report.failures) std::cerr << "failed: " << f << '\n';
      if (!report.rows.empty()) bench::write_results_csv(std::cout, config.mode, report.rows, report.speedups);
      return report.exit_status;
    }
  } catch (const std::exception& e) {
    std::cerr << "punchgrid: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
