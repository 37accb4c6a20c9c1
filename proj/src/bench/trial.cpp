#include <algorithm>
#include <cmath>
#include <random>

#include "punchgrid/bench/bench.hpp"
#include "punchgrid/table/distributed.hpp"

namespace punchgrid::bench {

namespace {

double to_ms(net::Duration d) { return std::chrono::duration<double, std::milli>(d).count(); }

void put_f64(Bytes& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_le(out, bits);
}

double read_f64(ByteReader& in) {
  const auto bits = in.read<std::uint64_t>();
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

std::string_view to_string(Mode m) { return m == Mode::Weak ? "weak" : "strong"; }
std::string_view to_string(TransportKind t) { return t == TransportKind::Tcp ? "tcp" : "natsim"; }

Mode parse_mode(std::string_view s) {
  if (s == "weak") return Mode::Weak;
  if (s == "strong") return Mode::Strong;
  fail(ErrorCode::InvalidArgument, "mode must be weak or strong, got '" + std::string(s) + "'");
}

TransportKind parse_transport(std::string_view s) {
  if (s == "tcp") return TransportKind::Tcp;
  if (s == "natsim") return TransportKind::Natsim;
  fail(ErrorCode::InvalidArgument, "transport must be tcp or natsim, got '" + std::string(s) + "'");
}

void ExperimentConfig::validate() const {
  if (world_sizes.empty()) fail(ErrorCode::InvalidArgument, "world size list is empty");
  for (auto w : world_sizes) {
    if (w == 0) fail(ErrorCode::InvalidArgument, "world size 0");
    if (mode == Mode::Strong && rows < w) {
      fail(ErrorCode::InvalidArgument, "strong scaling needs rows >= W (" + std::to_string(rows) + " < " +
                                           std::to_string(w) + ")");
    }
  }
  if (iterations < 1) fail(ErrorCode::InvalidArgument, "iterations must be >= 1");
  if (repeats < 1) fail(ErrorCode::InvalidArgument, "repeats must be >= 1");
  if (!(unique_fraction > 0.0 && unique_fraction <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "unique fraction must be in (0, 1]");
  }
}

ExperimentConfig ExperimentConfig::paper_scale(Mode mode) {
  ExperimentConfig c;
  c.mode = mode;
  c.rows = mode == Mode::Weak ? 9'100'000 : 4'500'000;
  c.world_sizes = {1, 2, 4, 8, 16, 32, 64};
  c.iterations = 10;
  c.repeats = 4;
  return c;
}

std::uint64_t rows_for_rank(const ExperimentConfig& config, std::uint32_t world_size, std::uint32_t rank) {
  if (config.mode == Mode::Weak) return config.rows;
  return config.rows / world_size + (rank < config.rows % world_size ? 1 : 0);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::pair<table::Partition, table::Partition> generate_tables(std::uint64_t rows, double unique_fraction,
                                                              std::uint64_t seed, std::uint32_t rank,
                                                              std::uint32_t world_size) {
  if (!(unique_fraction > 0.0 && unique_fraction <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "unique fraction must be in (0, 1]");
  }
  const auto domain = std::max<std::uint64_t>(
      1, static_cast<std::uint64_t>(std::ceil(unique_fraction * static_cast<double>(rows) * world_size)));
  std::mt19937_64 rng(splitmix64(seed ^ rank));
  std::uniform_int_distribution<std::uint64_t> key(0, domain - 1);
  auto make = [&](const char* value_name) {
    table::Int64Column k(rows);
    table::Int64Column v(rows);
    for (std::uint64_t i = 0; i < rows; ++i) {
      k[i] = static_cast<std::int64_t>(key(rng));
      v[i] = static_cast<std::int64_t>(rng());
    }
    return table::Partition(table::Schema({{"key", table::TypeTag::Int64}, {value_name, table::TypeTag::Int64}}),
                            {std::move(k), std::move(v)});
  };
  auto left = make("value");
  auto right = make("value");
  return {std::move(left), std::move(right)};
}

std::optional<TrialResult> run_trial(comm::Communicator& c, const ExperimentConfig& config, std::uint32_t trial) {
  const auto w = c.world_size();
  const auto rows = rows_for_rank(config, w, c.rank());
  auto [l, r] = generate_tables(rows, config.unique_fraction, config.seed, c.rank(), w);
  const table::DistributedTable left{std::move(l), c.rank(), w};
  const table::DistributedTable right{std::move(r), c.rank(), w};

  auto& t = c.transport();
  Bytes mine;
  put_f64(mine, to_ms(c.init_time()));
  std::uint64_t local_rows = 0;
  for (std::uint32_t it = 0; it < config.iterations; ++it) {
    const auto t0 = t.now();
    c.barrier();
    const auto t1 = t.now();
    auto joined = table::distributed_join(c, left, right, 0);
    const auto t2 = t.now();
    local_rows = joined.local.num_rows();
    put_f64(mine, to_ms(t1 - t0));
    put_f64(mine, to_ms(t2 - t1));
  }
  put_le<std::uint64_t>(mine, local_rows);

  auto all = c.gatherv(0, mine);
  if (c.rank() != 0) return std::nullopt;

  TrialResult out;
  out.world_size = w;
  out.trial = trial;
  out.records.resize(config.iterations);
  for (std::uint32_t it = 0; it < config.iterations; ++it) {
    out.records[it].world_size = w;
    out.records[it].trial = trial;
    out.records[it].iteration = it;
  }
  for (const auto& bytes : all) {
    ByteReader in(bytes, ErrorCode::Truncated);
    const double init_ms = read_f64(in);
    for (auto& rec : out.records) {
      rec.com_init_ms = std::max(rec.com_init_ms, init_ms);
      rec.barrier_ms = std::max(rec.barrier_ms, read_f64(in));
      rec.join_ms = std::max(rec.join_ms, read_f64(in));
    }
    out.join_rows += in.read<std::uint64_t>();
  }
  double sum = 0;
  for (const auto& rec : out.records) sum += rec.join_ms;
  out.time_s = sum / config.iterations / 1000.0;
  return out;
}

}  // namespace punchgrid::bench
