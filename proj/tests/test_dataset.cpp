#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "puma/dataset.hpp"

using namespace puma;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& content) {
  const auto dir = fs::temp_directory_path() / "puma_test_dataset";
  fs::create_directories(dir);
  const auto p = dir / name;
  std::ofstream(p) << content;
  return p;
}

LabeledData seq_data(Eigen::Index n) {
  LabeledData d;
  d.X = Matrix(n, 1);
  d.Y = Vector(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.X(i, 0) = static_cast<double>(i);
    d.Y(i) = static_cast<double>(10 * i);
  }
  d.column_names = {"x"};
  return d;
}

}  // namespace

TEST(LoadCsv, LabeledThreeRows) {
  const auto p = temp_file("abc.csv", "a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
  const auto v = load_csv(p, std::string("y"), {});
  const auto& d = std::get<LabeledData>(v);
  EXPECT_EQ(d.rows(), 3);
  EXPECT_EQ(d.cols(), 2);
  EXPECT_EQ(d.column_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_DOUBLE_EQ(d.X(2, 1), 8.0);
  EXPECT_DOUBLE_EQ(d.Y(1), 6.0);
}

TEST(LoadCsv, UnlabeledWithoutOutcome) {
  const auto p = temp_file("abc2.csv", "a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
  const auto v = load_csv(p, std::nullopt, {"a", "b"});
  const auto& d = std::get<UnlabeledData>(v);
  EXPECT_EQ(d.rows(), 3);
  EXPECT_DOUBLE_EQ(d.Xtilde(0, 0), 1.0);
}

TEST(LoadCsv, NanCellNamesRowAndColumn) {
  const auto p = temp_file("nan.csv", "a,b,y\n1,2,3\n4,NaN,6\n");
  try {
    load_csv(p, std::string("y"), {});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'b'"), std::string::npos) << msg;
  }
}

TEST(LoadCsv, ContractErrors) {
  EXPECT_THROW(load_csv("/nonexistent/file.csv", std::string("y"), {}), Error);
  const auto p = temp_file("cols.csv", "a,b,y\n1,2,3\n");
  EXPECT_THROW(load_csv(p, std::string("z"), {}), Error);
  EXPECT_THROW(load_csv(p, std::string("y"), {"c"}), Error);
  const auto empty = temp_file("empty.csv", "a,b,y\n");
  EXPECT_THROW(load_csv(empty, std::string("y"), {}), Error);
  const auto bad = temp_file("bad.csv", "a,y\n1,abc\n");
  EXPECT_THROW(load_csv(bad, std::string("y"), {}), Error);
}

TEST(LoadCsv, RoundTripIsExact) {
  oracle::Gen g(5);
  LabeledData d;
  d.X = g.matrix(20, 3) * 1e3;
  d.Y = g.vector(20) / 7.0;
  d.column_names = {"a", "b", "c"};
  const auto p = fs::temp_directory_path() / "puma_test_dataset" / "rt.csv";
  write_csv(p, d, "y");
  const auto back = load_labeled_csv(p, "y", {});
  EXPECT_EQ(back.X, d.X);
  EXPECT_EQ(back.Y, d.Y);
  write_csv(p, back, "y");
  const auto again = load_labeled_csv(p, "y", {});
  EXPECT_EQ(again.X, d.X);
}

TEST(Split, TenRowsHalfIsDeterministic) {
  const auto d = seq_data(10);
  const auto [tr1, te1] = split(d, SplitSpec{0.5, 7});
  const auto [tr2, te2] = split(d, SplitSpec{0.5, 7});
  EXPECT_EQ(tr1.rows(), 5);
  EXPECT_EQ(te1.rows(), 5);
  EXPECT_EQ(tr1.X, tr2.X);
  EXPECT_EQ(te1.Y, te2.Y);
}

TEST(Split, FloorRuleAtRealDataSize) {
  const auto d = seq_data(265);
  const auto [tr, te] = split(d, SplitSpec{0.9, 1});
  EXPECT_EQ(tr.rows(), 238);
  EXPECT_EQ(te.rows(), 27);
}

TEST(Split, DegenerateSizesRejected) {
  EXPECT_THROW(split(seq_data(2), SplitSpec{0.1, 1}), Error);
  EXPECT_THROW(split(seq_data(1), SplitSpec{0.99, 1}), Error);
  EXPECT_NO_THROW(split(seq_data(2), SplitSpec{0.99, 1}));
}

TEST(Split, PartitionRecoversRows) {
  const auto d = seq_data(37);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto [tr, te] = split(d, SplitSpec{0.6, seed});
    std::multiset<double> all;
    for (Eigen::Index i = 0; i < tr.rows(); ++i) all.insert(tr.X(i, 0));
    for (Eigen::Index i = 0; i < te.rows(); ++i) all.insert(te.X(i, 0));
    std::multiset<double> orig;
    for (Eigen::Index i = 0; i < d.rows(); ++i) orig.insert(d.X(i, 0));
    ASSERT_EQ(all, orig);
    for (Eigen::Index i = 0; i < tr.rows(); ++i) ASSERT_DOUBLE_EQ(tr.Y(i), 10 * tr.X(i, 0));
  }
}

TEST(Split, DistinctSeedsGiveDistinctPartitions) {
  const auto d = seq_data(40);
  int same = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto [a, ai] = split_indices(40, SplitSpec{0.5, s});
    const auto [b, bi] = split_indices(40, SplitSpec{0.5, s + 1000});
    same += a == b;
  }
  EXPECT_EQ(same, 0);
}
