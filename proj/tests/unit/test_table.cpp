#include <algorithm>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>

#include "doctest.h"
#include "punchgrid/natsim/cluster.hpp"
#include "punchgrid/partition_codec.hpp"
#include "punchgrid/table/csv.hpp"
#include "punchgrid/table/distributed.hpp"
#include "punchgrid/table/ops.hpp"

using namespace punchgrid;
using namespace punchgrid::table;

namespace {

// Reference FNV-1a written straight from the published constants, kept
// separate from the library's implementation.
std::uint64_t ref_fnv(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h = (h ^ c) * 1099511628211ULL;
  }
  return h;
}

std::uint64_t ref_fnv_key(std::int64_t k) {
  std::string le(8, '\0');
  auto u = static_cast<std::uint64_t>(k);
  for (int i = 0; i < 8; ++i) le[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  return ref_fnv(le);
}

Schema kv_schema(const std::string& value_name = "v") {
  return Schema({{"k", TypeTag::Int64}, {value_name, TypeTag::Int64}});
}

Partition kv(std::vector<std::int64_t> k, std::vector<std::int64_t> v, const std::string& value_name = "v") {
  return Partition(kv_schema(value_name), {Int64Column(std::move(k)), Int64Column(std::move(v))});
}

Partition random_kv(std::mt19937_64& rng, std::size_t rows, std::int64_t domain, const std::string& value_name) {
  std::uniform_int_distribution<std::int64_t> key(0, domain - 1);
  std::vector<std::int64_t> k(rows);
  std::vector<std::int64_t> v(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    k[i] = key(rng);
    v[i] = static_cast<std::int64_t>(rng());
  }
  return kv(std::move(k), std::move(v), value_name);
}

using Row = std::vector<std::int64_t>;

// Every (l, r) with equal keys, as (key, l.v, r.v), in nested-loop order and
// then stably ordered by key. That is exactly the order local_join promises.
std::vector<Row> nested_loop_join(const Partition& l, const Partition& r) {
  std::vector<Row> out;
  const auto& lk = l.int64(0);
  const auto& rk = r.int64(0);
  for (std::size_t i = 0; i < lk.size(); ++i) {
    for (std::size_t j = 0; j < rk.size(); ++j) {
      if (lk[i] == rk[j]) out.push_back({lk[i], l.int64(1)[i], r.int64(1)[j]});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Row& a, const Row& b) { return a[0] < b[0]; });
  return out;
}

std::vector<Row> rows_of(const Partition& p) {
  std::vector<Row> out(p.num_rows());
  for (std::size_t r = 0; r < p.num_rows(); ++r) {
    for (std::size_t c = 0; c < p.num_columns(); ++c) out[r].push_back(p.int64(c)[r]);
  }
  return out;
}

// Per-rank input for the distributed tests, derived from (seed, rank) only.
Partition shard(std::uint64_t seed, std::uint32_t rank, std::size_t rows, std::int64_t domain, const char* name) {
  std::mt19937_64 rng(seed * 1000003 + rank);
  return random_kv(rng, rows, domain, name);
}

struct JoinRun {
  std::vector<Partition> shards;  // by rank
  std::vector<std::uint64_t> totals;
  bool ok = true;
};

JoinRun run_distributed(std::uint32_t w, std::uint64_t seed, std::size_t rows_per_rank, std::int64_t domain,
                        std::int64_t right_offset = 0) {
  natsim::ClusterConfig cfg;
  cfg.world_size = w;
  natsim::SimCluster cluster(cfg);
  JoinRun run;
  run.shards.resize(w);
  run.totals.resize(w);
  auto outcomes = cluster.run([&](comm::Communicator& c) {
    DistributedTable left{shard(seed, c.rank(), rows_per_rank, domain, "a"), c.rank(), w};
    auto right_local = shard(seed + 1, c.rank(), rows_per_rank, domain, "b");
    if (right_offset != 0) {
      auto k = right_local.int64(0);
      for (auto& x : k) x += right_offset;
      right_local = Partition(right_local.schema(), {k, right_local.column(1)});
    }
    DistributedTable right{right_local, c.rank(), w};
    auto joined = distributed_join(c, left, right, 0);
    run.totals[c.rank()] = total_length(c, joined);
    run.shards[c.rank()] = joined.local;
  });
  for (const auto& o : outcomes) {
    INFO(o.error_text);
    CHECK_FALSE(o.error);
    if (o.error) run.ok = false;
  }
  return run;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("fnv1a64 matches the reference on published vectors and keys") {
  CHECK(ref_fnv("") == 0xcbf29ce484222325ULL);
  CHECK(ref_fnv("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(ref_fnv("foobar") == 0x85944171f73967e8ULL);
  CHECK(fnv1a64(to_bytes("")) == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64(to_bytes("a")) == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64(to_bytes("foobar")) == 0x85944171f73967e8ULL);

  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const auto k = static_cast<std::int64_t>(rng());
    CHECK(fnv1a64(k) == ref_fnv_key(k));
  }
  CHECK(fnv1a64(std::int64_t{-1}) == ref_fnv_key(-1));
  CHECK(fnv1a64(std::numeric_limits<std::int64_t>::min()) == ref_fnv_key(std::numeric_limits<std::int64_t>::min()));
}

TEST_CASE("hash_partition small cases") {
  const auto p = kv({0, 1, 2, 3}, {10, 11, 12, 13});

  SUBCASE("one bucket is the identity") {
    auto b = hash_partition(p, 0, 1);
    REQUIRE(b.size() == 1);
    CHECK(b[0] == p);
  }
  SUBCASE("two buckets follow the reference hash row by row") {
    auto b = hash_partition(p, 0, 2);
    REQUIRE(b.size() == 2);
    std::vector<std::vector<std::int64_t>> expect(2);
    for (std::int64_t k = 0; k < 4; ++k) expect[ref_fnv_key(k) % 2].push_back(k);
    CHECK(b[0].int64(0) == expect[0]);
    CHECK(b[1].int64(0) == expect[1]);
    for (const auto& part : b) {
      for (std::size_t r = 0; r < part.num_rows(); ++r) CHECK(part.int64(1)[r] == part.int64(0)[r] + 10);
    }
  }
  SUBCASE("empty input gives empty buckets") {
    auto b = hash_partition(Partition::empty(kv_schema()), 0, 5);
    REQUIRE(b.size() == 5);
    for (const auto& part : b) {
      CHECK(part.num_rows() == 0);
      CHECK(part.schema() == kv_schema());
    }
  }
  SUBCASE("errors") {
    Partition f(Schema({{"x", TypeTag::Float64}}), {Float64Column{1.0}});
    CHECK(code_of([&] { hash_partition(f, 0, 2); }) == ErrorCode::UnsupportedKeyType);
    CHECK(code_of([&] { hash_partition(p, 0, 0); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([&] { hash_partition(p, 2, 2); }) == ErrorCode::InvalidArgument);
  }
}

TEST_CASE("hash_partition conserves rows and keeps order") {
  std::mt19937_64 rng(11);
  for (int round = 0; round < 50; ++round) {
    const auto rows = static_cast<std::size_t>(rng() % 500);
    const auto buckets = static_cast<std::uint32_t>(1 + rng() % 16);
    auto p = random_kv(rng, rows, 100, "v");
    // Tag each row with its index so order and multiset are both observable.
    std::vector<std::int64_t> idx(rows);
    for (std::size_t i = 0; i < rows; ++i) idx[i] = static_cast<std::int64_t>(i);
    p = Partition(kv_schema(), {p.column(0), Int64Column(idx)});

    auto parts = hash_partition(p, 0, buckets);
    REQUIRE(parts.size() == buckets);
    std::size_t total = 0;
    std::vector<int> seen(rows, 0);
    for (std::uint32_t b = 0; b < buckets; ++b) {
      total += parts[b].num_rows();
      const auto& ks = parts[b].int64(0);
      const auto& is = parts[b].int64(1);
      for (std::size_t r = 0; r < ks.size(); ++r) {
        CHECK(ref_fnv_key(ks[r]) % buckets == b);
        CHECK(p.int64(0)[static_cast<std::size_t>(is[r])] == ks[r]);
        ++seen[static_cast<std::size_t>(is[r])];
        if (r > 0) CHECK(is[r - 1] < is[r]);
      }
    }
    CHECK(total == rows);
    CHECK(std::all_of(seen.begin(), seen.end(), [](int n) { return n == 1; }));
  }
}

TEST_CASE("local_join hand-checked cases") {
  SUBCASE("2x2") {
    auto out = local_join(kv({1, 2}, {10, 20}, "a"), kv({2, 3}, {7, 9}, "b"), 0);
    REQUIRE(out.num_rows() == 1);
    CHECK(out.schema() == Schema({{"k", TypeTag::Int64}, {"a", TypeTag::Int64}, {"b", TypeTag::Int64}}));
    CHECK(out.int64(0) == Int64Column{2});
    CHECK(out.int64(1) == Int64Column{20});
    CHECK(out.int64(2) == Int64Column{7});
  }
  SUBCASE("duplicate keys give the cross product in left then right order") {
    auto out = local_join(kv({5, 5}, {1, 2}, "a"), kv({5, 5, 5}, {7, 8, 9}, "b"), 0);
    REQUIRE(out.num_rows() == 6);
    CHECK(out.int64(1) == Int64Column{1, 1, 1, 2, 2, 2});
    CHECK(out.int64(2) == Int64Column{7, 8, 9, 7, 8, 9});
  }
  SUBCASE("output is ordered by key") {
    auto out = local_join(kv({3, 1, 2, 1}, {30, 10, 20, 11}, "a"), kv({1, 3, 2}, {100, 300, 200}, "b"), 0);
    CHECK(out.int64(0) == Int64Column{1, 1, 2, 3});
    CHECK(out.int64(1) == Int64Column{10, 11, 20, 30});
    CHECK(out.int64(2) == Int64Column{100, 100, 200, 300});
  }
  SUBCASE("empty sides") {
    auto out = local_join(Partition::empty(kv_schema("a")), kv({1}, {2}, "b"), 0);
    CHECK(out.num_rows() == 0);
    CHECK(out.num_columns() == 3);
  }
}

TEST_CASE("local_join names, types and errors") {
  SUBCASE("a clashing right name gets the _r suffix") {
    auto out = local_join(kv({1}, {2}), kv({1}, {3}), 0);
    CHECK(out.schema() == Schema({{"k", TypeTag::Int64}, {"v", TypeTag::Int64}, {"v_r", TypeTag::Int64}}));
  }
  SUBCASE("a clash the suffix cannot resolve") {
    Partition left(Schema({{"k", TypeTag::Int64}, {"v", TypeTag::Int64}, {"v_r", TypeTag::Int64}}),
                   {Int64Column{1}, Int64Column{2}, Int64Column{3}});
    CHECK(code_of([&] { local_join(left, kv({1}, {3}), 0); }) == ErrorCode::SchemaNameCollision);
  }
  SUBCASE("mixed column types are carried through") {
    Partition left(Schema({{"k", TypeTag::Int64}, {"s", TypeTag::Utf8}}), {Int64Column{1, 2}, Utf8Column{"x", "y"}});
    Partition right(Schema({{"k", TypeTag::Int64}, {"f", TypeTag::Float64}}), {Int64Column{2, 2}, Float64Column{0.5, 1.5}});
    auto out = local_join(left, right, 0);
    REQUIRE(out.num_rows() == 2);
    CHECK(std::get<Utf8Column>(out.column(1)) == Utf8Column{"y", "y"});
    CHECK(std::get<Float64Column>(out.column(2)) == Float64Column{0.5, 1.5});
  }
  SUBCASE("non-integer keys") {
    Partition f(Schema({{"k", TypeTag::Float64}, {"v", TypeTag::Int64}}), {Float64Column{1.0}, Int64Column{1}});
    CHECK(code_of([&] { local_join(f, kv({1}, {1}), 0); }) == ErrorCode::UnsupportedKeyType);
    CHECK(code_of([&] { local_join(kv({1}, {1}), f, 0); }) == ErrorCode::UnsupportedKeyType);
  }
}

TEST_CASE("local_join equals the nested-loop oracle") {
  std::mt19937_64 rng(2024);
  for (int round = 0; round < 60; ++round) {
    const auto ln = static_cast<std::size_t>(rng() % 1001);
    const auto rn = static_cast<std::size_t>(rng() % 1001);
    const auto domain = static_cast<std::int64_t>(1 + rng() % 400);
    auto l = random_kv(rng, ln, domain, "a");
    auto r = random_kv(rng, rn, domain, "b");
    CHECK(rows_of(local_join(l, r, 0)) == nested_loop_join(l, r));
  }
}

TEST_CASE("concat") {
  auto a = kv({1, 2}, {10, 20});
  auto b = kv({3, 4, 5}, {30, 40, 50});
  CHECK(concat({a}) == a);
  auto ab = concat({a, b});
  CHECK(ab.num_rows() == 5);
  CHECK(ab.int64(0) == Int64Column{1, 2, 3, 4, 5});
  CHECK(code_of([&] { concat({a, kv({1}, {1}, "w")}); }) == ErrorCode::SchemaMismatch);
  CHECK(code_of([&] { concat({}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("csv round trip") {
  Partition p(Schema({{"k", TypeTag::Int64}, {"f", TypeTag::Float64}, {"s", TypeTag::Utf8}}),
              {Int64Column{std::numeric_limits<std::int64_t>::min(), 0, 42, -7},
               Float64Column{0.1, -2.5e-300, std::numeric_limits<double>::infinity(), 1.0 / 3.0},
               Utf8Column{"plain", "", "comma, \"quote\"", "multi\nline\r\nvalue"}});
  std::stringstream ss;
  write_csv(ss, p);
  CHECK(ss.str().rfind("#schema: k:int64,f:float64,s:utf8\nk,f,s\n", 0) == 0);
  CHECK(read_csv(ss) == p);

  auto path = std::filesystem::temp_directory_path() / "punchgrid_csv_round_trip.csv";
  write_csv(path, p);
  CHECK(read_csv(path) == p);
  std::filesystem::remove(path);

  auto empty = Partition::empty(Schema({{"s", TypeTag::Utf8}}));
  std::stringstream es;
  write_csv(es, empty);
  CHECK(read_csv(es) == empty);

  Partition blanks(Schema({{"s", TypeTag::Utf8}}), {Utf8Column{"", ""}});
  std::stringstream bs;
  write_csv(bs, blanks);
  CHECK(read_csv(bs) == blanks);

  std::stringstream bad("k,v\n1,2\n");
  CHECK(code_of([&] { read_csv(bad); }) == ErrorCode::MalformedSchemaBlock);
  std::stringstream ragged("#schema: k:int64,v:int64\nk,v\n1\n");
  CHECK(code_of([&] { read_csv(ragged); }) == ErrorCode::LengthMismatch);
  std::stringstream notnum("#schema: k:int64\nk\nabc\n");
  CHECK(code_of([&] { read_csv(notnum); }) == ErrorCode::Io);
}

TEST_CASE("distributed_join with one rank is the local join") {
  auto run = run_distributed(1, 5, 800, 300);
  REQUIRE(run.ok);
  auto expect = local_join(shard(5, 0, 800, 300, "a"), shard(6, 0, 800, 300, "b"), 0);
  CHECK(run.shards[0] == expect);
  CHECK(run.totals[0] == expect.num_rows());
}

TEST_CASE("distributed_join equals the oracle on the concatenated inputs") {
  struct Shape {
    std::uint32_t w;
    std::size_t rows_per_rank;
    std::int64_t domain;
  };
  // 10k rows per side at W=4, plus smaller sweeps up to W=8.
  for (auto s : {Shape{4, 2500, 5000}, Shape{2, 700, 300}, Shape{3, 500, 200}, Shape{5, 300, 150},
                 Shape{8, 250, 400}}) {
    CAPTURE(s.w);
    const std::uint64_t seed = 100 + s.w;
    auto run = run_distributed(s.w, seed, s.rows_per_rank, s.domain);
    REQUIRE(run.ok);

    std::vector<Partition> ls;
    std::vector<Partition> rs;
    for (std::uint32_t r = 0; r < s.w; ++r) {
      ls.push_back(shard(seed, r, s.rows_per_rank, s.domain, "a"));
      rs.push_back(shard(seed + 1, r, s.rows_per_rank, s.domain, "b"));
    }
    auto expect = nested_loop_join(concat(ls), concat(rs));

    std::vector<Row> got;
    for (std::uint32_t r = 0; r < s.w; ++r) {
      for (auto k : run.shards[r].int64(0)) CHECK(ref_fnv_key(k) % s.w == r);
      auto rows = rows_of(run.shards[r]);
      got.insert(got.end(), rows.begin(), rows.end());
      CHECK(run.totals[r] == expect.size());
    }
    std::sort(got.begin(), got.end());
    std::sort(expect.begin(), expect.end());
    CHECK(got == expect);
  }
}

TEST_CASE("distributed_join with disjoint key ranges is empty everywhere") {
  auto run = run_distributed(4, 9, 400, 1000, 1000);
  REQUIRE(run.ok);
  for (const auto& s : run.shards) {
    CHECK(s.num_rows() == 0);
    CHECK(s.num_columns() == 3);
  }
  CHECK(run.totals[0] == 0);
}

TEST_CASE("distributed_join shards are byte-identical across runs") {
  auto a = run_distributed(4, 77, 600, 500);
  auto b = run_distributed(4, 77, 600, 500);
  REQUIRE(a.ok);
  REQUIRE(b.ok);
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(wire::partition_to_bytes(a.shards[r]) == wire::partition_to_bytes(b.shards[r]));
  }
}
