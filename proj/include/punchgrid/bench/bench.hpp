#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "punchgrid/comm/communicator.hpp"
#include "punchgrid/table/partition.hpp"

namespace punchgrid::bench {

enum class Mode { Weak, Strong };
enum class TransportKind { Tcp, Natsim };

std::string_view to_string(Mode m);
std::string_view to_string(TransportKind t);
Mode parse_mode(std::string_view s);
TransportKind parse_transport(std::string_view s);

struct ExperimentConfig {
  Mode mode = Mode::Strong;
  /// Weak: rows per worker. Strong: total rows, split evenly.
  std::uint64_t rows = 1'000'000;
  std::vector<std::uint32_t> world_sizes{1, 2, 4};
  std::uint32_t iterations = 3;
  std::uint32_t repeats = 2;
  /// Key domain is ceil(unique_fraction * rows * W).
  double unique_fraction = 1.0;
  std::uint64_t seed = 42;
  TransportKind transport = TransportKind::Tcp;

  void validate() const;

  /// 9.1M rows per worker (weak) or 4.5M total (strong), W up to 64,
  /// ten iterations, four repeats.
  static ExperimentConfig paper_scale(Mode mode);
};

/// Rows rank `rank` generates for a run over `world_size` workers.
std::uint64_t rows_for_rank(const ExperimentConfig& config, std::uint32_t world_size, std::uint32_t rank);

struct TimingRecord {
  std::uint32_t world_size = 0;
  std::uint32_t trial = 0;
  std::uint32_t iteration = 0;
  double join_ms = 0;
  double barrier_ms = 0;
  double com_init_ms = 0;
};

/// One trial as seen by rank 0. Per-iteration times are the maximum over
/// ranks; `time_s` is the mean of those join times.
struct TrialResult {
  std::uint32_t world_size = 0;
  std::uint32_t trial = 0;
  std::vector<TimingRecord> records;
  double time_s = 0;
  std::uint64_t join_rows = 0;
};

struct ScalingRow {
  std::uint32_t world_size = 0;
  double mean_s = 0;
  double std_s = 0;
};

struct SpeedupRow {
  std::uint32_t world_size = 0;
  double speedup = 0;
  double error = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Two (key, value) INT64 tables for one rank, drawn from mt19937_64 seeded
/// with splitmix64(seed ^ rank): keys uniform in [0, ceil(u * rows * W)),
/// values uniform over 64 bits. Left rows are drawn before right rows.
std::pair<table::Partition, table::Partition> generate_tables(std::uint64_t rows, double unique_fraction,
                                                              std::uint64_t seed, std::uint32_t rank,
                                                              std::uint32_t world_size);

/// Runs the iterations of one trial on this rank: barrier, then a timed
/// distributed join on column 0. Timings are gathered to rank 0, which gets
/// the result; other ranks get nullopt. Collective.
std::optional<TrialResult> run_trial(comm::Communicator& c, const ExperimentConfig& config, std::uint32_t trial);

/// S = T1 / T2 with the relative errors added in quadrature.
SpeedupRow speedup(const ScalingRow& baseline, const ScalingRow& parallel);

/// Mean and sample standard deviation (n - 1) of per-trial times.
ScalingRow summarize(std::uint32_t world_size, const std::vector<double>& trial_times);

/// One row per requested world size, in order. Throws NoData naming the
/// first world size without a trial.
std::vector<ScalingRow> aggregate(const std::vector<TrialResult>& trials, const std::vector<std::uint32_t>& world_sizes);

/// Speedups against the first row.
std::vector<SpeedupRow> speedups(const std::vector<ScalingRow>& rows);

void write_results_csv(std::ostream& out, Mode mode, const std::vector<ScalingRow>& rows,
                       const std::vector<SpeedupRow>& speedups);
void write_plotdat(std::ostream& out, const std::vector<ScalingRow>& rows, const std::vector<SpeedupRow>& speedups);

struct LaunchOptions {
  std::filesystem::path out_dir = "bench-out";
  /// Executable that implements `worker` (tcp transport only).
  std::filesystem::path worker_exe;
  /// Clears the job's coordination keys before every trial.
  bool clear_between_repeats = true;
  /// Progress lines; null for silence.
  std::ostream* log = nullptr;
};

struct LaunchReport {
  std::vector<TrialResult> trials;
  std::vector<std::string> failures;
  std::vector<ScalingRow> rows;
  std::vector<SpeedupRow> speedups;
  int exit_status = 0;
};

/// Runs repeats x world_sizes trials, then writes results.csv, speedup.dat
/// and run-metadata.json into `out_dir`. exit_status is nonzero when any
/// trial failed or a world size produced no data.
LaunchReport launch(const ExperimentConfig& config, const LaunchOptions& options);

/// Entry point of a spawned tcp worker. Reads PUNCHGRID_JOB, PUNCHGRID_KV,
/// PUNCHGRID_RDV and PUNCHGRID_PAYLOAD. Returns the process exit status.
int run_worker_from_env();

}  // namespace punchgrid::bench
