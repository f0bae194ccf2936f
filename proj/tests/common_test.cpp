#include <gtest/gtest.h>

#include <atomic>
#include <set>
#include <stdexcept>
#include <vector>

#include "fdrcast/common.hpp"
#include "fdrcast/io.hpp"

namespace fdrcast {
namespace {

TEST(DeriveSeed, IsDeterministic) {
  EXPECT_EQ(derive_seed(42, Stream::kSampling, 3), derive_seed(42, Stream::kSampling, 3));
}

TEST(DeriveSeed, StreamsAndIndicesDiffer) {
  std::set<std::uint64_t> seen;
  for (auto stream : {Stream::kMutation, Stream::kSampling, Stream::kCrossValidation, Stream::kBootstrap,
                      Stream::kClustering, Stream::kEvaluation, Stream::kSynthetic}) {
    for (std::uint64_t i = 0; i < 50; ++i) seen.insert(derive_seed(7, stream, i));
  }
  EXPECT_EQ(seen.size(), 7u * 50u);
  EXPECT_NE(derive_seed(1, Stream::kMutation), derive_seed(2, Stream::kMutation));
}

TEST(ParallelFor, ResultIndependentOfThreadCount) {
  auto run = [](int threads) {
    std::vector<std::uint64_t> out(1001);
    parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = splitmix64(i); });
    return out;
  };
  const auto reference = run(1);
  for (int t : {2, 3, 8, 64}) EXPECT_EQ(run(t), reference) << "threads=" << t;
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(257);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(ParallelFor, RethrowsWorkerErrors) {
  EXPECT_THROW(parallel_for(100, 4,
                            [](std::size_t i) {
                              if (i == 57) throw Error(ErrorCode::kDegenerate, "boom");
                            }),
               Error);
}

TEST(ParallelFor, ZeroCountIsNoop) {
  bool called = false;
  parallel_for(0, 4, [&](std::size_t) { called = true; });
  EXPECT_FALSE(called);
}

TEST(ErrorCodeName, StableStrings) {
  EXPECT_EQ(error_code_name(ErrorCode::kDigestMismatch), "digest_mismatch");
  EXPECT_EQ(error_code_name(ErrorCode::kEmptyPool), "empty_pool");
  EXPECT_EQ(error_code_name(ErrorCode::kConfig), "config");
}

TEST(Io, FormatDoubleRoundTrips) {
  for (double v : {0.0, 1.0, -2.5, 0.1, 1e-300, 123456.789, 1.0 / 3.0}) {
    EXPECT_EQ(io::parse_double(io::format_double(v), "test"), v);
  }
  EXPECT_EQ(io::format_double(0.0), "0");
}

TEST(Io, ParseDoubleRejectsGarbage) {
  EXPECT_THROW(io::parse_double("abc", "x"), Error);
  EXPECT_THROW(io::parse_double("nan", "x"), Error);
  EXPECT_THROW(io::parse_double("1.5x", "x"), Error);
}

TEST(Io, Sha256KnownVector) {
  EXPECT_EQ(io::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Io, CsvRoundTrip) {
  io::CsvTable t;
  t.header = {"a", "b"};
  t.rows = {{"1", "2"}, {"3", "4"}};
  const auto parsed = io::parse_csv(io::to_csv(t), "mem");
  EXPECT_EQ(parsed.header, t.header);
  EXPECT_EQ(parsed.rows, t.rows);
}

TEST(Io, CsvRejectsRaggedRows) {
  EXPECT_THROW(io::parse_csv("a,b\n1,2,3\n", "mem"), Error);
}

TEST(Io, MatrixCsvRequiresSequentialIndex) {
  const auto dir = std::filesystem::temp_directory_path() / "fdrcast_common_test";
  io::write_file(dir / "bad.csv", "input_index,c0\n0,1.0\n2,3.0\n");
  EXPECT_THROW(io::read_matrix_csv(dir / "bad.csv"), Error);
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  io::write_matrix_csv(dir / "good.csv", m);
  const auto back = io::read_matrix_csv(dir / "good.csv");
  EXPECT_EQ(back.values, m);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace fdrcast
