#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "ltnode/datasets.hpp"
#include "test_util.hpp"

using namespace ltnode;

TEST(Foong1d, ShapeAndSupport) {
  const Dataset ds = gen_foong1d(200, 0.02, 7);
  EXPECT_EQ(ds.inputs.rows(), 200);
  EXPECT_EQ(ds.inputs.cols(), 1);
  EXPECT_EQ(ds.targets.size(), 200);
  EXPECT_TRUE(ds.labels.empty());
  int left = 0, right = 0;
  for (int i = 0; i < 200; ++i) {
    const double x = ds.inputs(i, 0);
    // the generator leaves the central band empty
    EXPECT_TRUE((x >= -1.0 && x <= -0.5) || (x >= 0.5 && x <= 1.0)) << x;
    (x < 0 ? left : right)++;
  }
  EXPECT_EQ(left, 100);
  EXPECT_EQ(right, 100);
}

TEST(Foong1d, TargetsFollowCurve) {
  const Dataset ds = gen_foong1d(500, 0.0, 3);
  for (int i = 0; i < 500; ++i) {
    const double x = ds.inputs(i, 0);
    const double y = x + 0.3 * std::sin(2 * M_PI * x) + 0.3 * std::sin(4 * M_PI * x);
    EXPECT_NEAR(ds.targets[i], y, 1e-12);
  }
}

TEST(Foong1d, SeedDeterminism) {
  const Dataset a = gen_foong1d(50, 0.02, 9);
  const Dataset b = gen_foong1d(50, 0.02, 9);
  const Dataset c = gen_foong1d(50, 0.02, 10);
  EXPECT_TRUE((a.inputs.array() == b.inputs.array()).all());
  EXPECT_TRUE((a.targets.array() == b.targets.array()).all());
  EXPECT_FALSE((a.inputs.array() == c.inputs.array()).all());
}

TEST(TwoMoons, LabelsAndGeometry) {
  const Dataset ds = gen_two_moons(400, 0.0, 5);
  EXPECT_EQ(ds.num_classes, 2);
  EXPECT_EQ(ds.inputs.cols(), 2);
  int ones = 0;
  for (int i = 0; i < 400; ++i) {
    const int y = ds.labels[static_cast<std::size_t>(i)];
    ones += y;
    const double x0 = ds.inputs(i, 0), x1 = ds.inputs(i, 1);
    if (y == 0) {
      EXPECT_NEAR(x0 * x0 + x1 * x1, 1.0, 1e-9);  // unit upper arc
      EXPECT_GE(x1, -1e-12);
    } else {
      const double dx = x0 - 1.0, dy = x1 - 0.5;
      EXPECT_NEAR(dx * dx + dy * dy, 1.0, 1e-9);  // shifted lower arc
      EXPECT_LE(x1, 0.5 + 1e-12);
    }
  }
  EXPECT_EQ(ones, 200);
}

TEST(OodInputs, ShiftAndScale) {
  const Dataset ref = gen_two_moons(100, 0.1, 1);
  Eigen::VectorXd shift(2);
  shift << 4.0, -4.0;
  const kernels::RowMat ood = gen_ood_inputs(ref, shift, 0.0, 300, 2);
  EXPECT_EQ(ood.rows(), 300);
  EXPECT_EQ(ood.cols(), 2);
  const Eigen::VectorXd mean_ref = ref.inputs.colwise().mean().transpose();
  // scale 0: every sample sits exactly at the shifted reference mean
  for (int i = 0; i < 300; ++i) {
    EXPECT_NEAR(ood(i, 0), mean_ref[0] + 4.0, 1e-12);
    EXPECT_NEAR(ood(i, 1), mean_ref[1] - 4.0, 1e-12);
  }

  const kernels::RowMat spread = gen_ood_inputs(ref, shift, 1.0, 300, 2);
  double var = 0.0;
  const double m0 = spread.col(0).mean();
  for (int i = 0; i < 300; ++i) var += (spread(i, 0) - m0) * (spread(i, 0) - m0);
  EXPECT_NEAR(var / 300.0, 1.0, 0.25);

  Eigen::VectorXd bad(3);
  bad.setZero();
  EXPECT_THROW(gen_ood_inputs(ref, bad, 1.0, 5, 1), shape_error);
}

TEST(SplitAndSubset, DisjointExhaustive) {
  Dataset ds = gen_two_moons(100, 0.1, 3);
  train_test_split(ds, 0.25, 11);
  int tr = 0, te = 0;
  for (auto s : ds.split) (s == Split::train ? tr : te)++;
  EXPECT_EQ(te, 25);
  EXPECT_EQ(tr, 75);

  const Dataset train = subset(ds, Split::train);
  const Dataset test = subset(ds, Split::test);
  EXPECT_EQ(train.size(), 75);
  EXPECT_EQ(test.size(), 25);
  EXPECT_EQ(train.num_classes, 2);
  EXPECT_EQ(test.labels.size(), 25u);

  // same seed reproduces the assignment
  Dataset ds2 = gen_two_moons(100, 0.1, 3);
  train_test_split(ds2, 0.25, 11);
  for (std::size_t i = 0; i < ds.split.size(); ++i) EXPECT_EQ(ds.split[i], ds2.split[i]);
}

TEST(Csv, RoundTripRegression) {
  testutil::TempDir td;
  const Dataset ds = gen_foong1d(40, 0.02, 8);
  write_csv(ds, td.str("foong.csv"));
  const Dataset back = read_csv(td.str("foong.csv"), /*classification=*/false);
  ASSERT_EQ(back.size(), ds.size());
  for (int i = 0; i < 40; ++i) {
    EXPECT_NEAR(back.inputs(i, 0), ds.inputs(i, 0), 1e-15);
    EXPECT_NEAR(back.targets[i], ds.targets[i], 1e-15);
  }
}

TEST(Csv, RoundTripClassification) {
  testutil::TempDir td;
  const Dataset ds = gen_two_moons(30, 0.1, 8);
  write_csv(ds, td.str("moons.csv"));
  const Dataset back = read_csv(td.str("moons.csv"), /*classification=*/true);
  ASSERT_EQ(back.size(), 30);
  EXPECT_EQ(back.num_classes, 2);
  for (int i = 0; i < 30; ++i) {
    EXPECT_NEAR(back.inputs(i, 1), ds.inputs(i, 1), 1e-15);
    EXPECT_EQ(back.labels[static_cast<std::size_t>(i)], ds.labels[static_cast<std::size_t>(i)]);
  }
}

TEST(Csv, MissingFileThrows) {
  EXPECT_THROW(read_csv("/nonexistent/nope.csv", false), io_error);
}

TEST(Generators, ContractChecks) {
  EXPECT_THROW(gen_foong1d(0), contract_error);
  EXPECT_THROW(gen_foong1d(10, -0.1), contract_error);
  EXPECT_THROW(gen_two_moons(-5), contract_error);
  Dataset ds = gen_two_moons(10, 0.1, 1);
  EXPECT_THROW(train_test_split(ds, 1.5, 1), contract_error);
}
