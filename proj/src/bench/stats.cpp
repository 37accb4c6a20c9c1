#include <cmath>
#include <iomanip>
#include <ostream>

#include "punchgrid/bench/bench.hpp"

namespace punchgrid::bench {

SpeedupRow speedup(const ScalingRow& baseline, const ScalingRow& parallel) {
  if (!(parallel.mean_s > 0)) {
    fail(ErrorCode::DivideByZero, "W=" + std::to_string(parallel.world_size) + " has a non-positive mean time");
  }
  if (!(baseline.mean_s > 0)) {
    fail(ErrorCode::DivideByZero, "baseline W=" + std::to_string(baseline.world_size) + " has a non-positive mean time");
  }
  const double s = baseline.mean_s / parallel.mean_s;
  const double r1 = baseline.std_s / baseline.mean_s;
  const double r2 = parallel.std_s / parallel.mean_s;
  return SpeedupRow{parallel.world_size, s, s * std::sqrt(r1 * r1 + r2 * r2)};
}

ScalingRow summarize(std::uint32_t world_size, const std::vector<double>& trial_times) {
  if (trial_times.empty()) fail(ErrorCode::NoData, "no successful trial for W=" + std::to_string(world_size));
  double sum = 0;
  for (double t : trial_times) sum += t;
  const double mean = sum / static_cast<double>(trial_times.size());
  double sq = 0;
  for (double t : trial_times) sq += (t - mean) * (t - mean);
  const double sd = trial_times.size() > 1 ? std::sqrt(sq / static_cast<double>(trial_times.size() - 1)) : 0.0;
  return ScalingRow{world_size, mean, sd};
}

std::vector<ScalingRow> aggregate(const std::vector<TrialResult>& trials,
                                  const std::vector<std::uint32_t>& world_sizes) {
  std::vector<ScalingRow> rows;
  for (auto w : world_sizes) {
    std::vector<double> times;
    for (const auto& t : trials) {
      if (t.world_size == w) times.push_back(t.time_s);
    }
    rows.push_back(summarize(w, times));
  }
  return rows;
}

std::vector<SpeedupRow> speedups(const std::vector<ScalingRow>& rows) {
  std::vector<SpeedupRow> out;
  for (const auto& r : rows) {
    // The baseline against itself is exactly 1; skip the division so
    // rounding cannot leak in.
    if (&r == &rows.front()) {
      out.push_back(speedup(r, r));
      out.back().speedup = 1.0;
    } else {
      out.push_back(speedup(rows.front(), r));
    }
  }
  return out;
}

void write_results_csv(std::ostream& out, Mode mode, const std::vector<ScalingRow>& rows,
                       const std::vector<SpeedupRow>& speedups) {
  out << "mode,W,mean_s,std_s,speedup,speedup_err\n";
  out << std::setprecision(9);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << to_string(mode) << ',' << rows[i].world_size << ',' << rows[i].mean_s << ',' << rows[i].std_s << ','
        << speedups.at(i).speedup << ',' << speedups.at(i).error << '\n';
  }
}

void write_plotdat(std::ostream& out, const std::vector<ScalingRow>& rows, const std::vector<SpeedupRow>& speedups) {
  out << "# W speedup speedup_err mean_s std_s\n";
  out << std::setprecision(9);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << rows[i].world_size << ' ' << speedups.at(i).speedup << ' ' << speedups.at(i).error << ' '
        << rows[i].mean_s << ' ' << rows[i].std_s << '\n';
  }
}

}  // namespace punchgrid::bench
