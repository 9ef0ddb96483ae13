#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ltnode/errors.hpp"
#include "ltnode/kernels.hpp"
#include "ltnode/rng.hpp"

namespace ltnode {

enum class Split { train, test };

struct Dataset {
  kernels::RowMat inputs;     // n x d
  Eigen::VectorXd targets;    // regression targets (empty for classification)
  std::vector<int> labels;    // class indices (empty for regression)
  std::vector<Split> split;   // per-row tag
  int num_classes = 0;

  Eigen::Index size() const { return inputs.rows(); }
  Eigen::Index dim() const { return inputs.cols(); }
  bool is_classification() const { return num_classes > 0; }
};

namespace detail {

inline void shuffle_rows(Dataset& ds, Rng& rng) {
  const Eigen::Index n = ds.size();
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(rng.uniform01() * static_cast<double>(i + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  kernels::RowMat in(n, ds.dim());
  Eigen::VectorXd tg(ds.targets.size() ? n : 0);
  std::vector<int> lb(ds.labels.empty() ? 0 : static_cast<std::size_t>(n));
  std::vector<Split> sp(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index j = perm[static_cast<std::size_t>(i)];
    in.row(i) = ds.inputs.row(j);
    if (tg.size()) tg[i] = ds.targets[j];
    if (!lb.empty()) lb[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(j)];
    sp[static_cast<std::size_t>(i)] = ds.split[static_cast<std::size_t>(j)];
  }
  ds.inputs = std::move(in);
  ds.targets = std::move(tg);
  ds.labels = std::move(lb);
  ds.split = std::move(sp);
}

}  // namespace detail

// 1-D regression set with a gap: inputs uniform on [-1, -0.5] and [0.5, 1]
// (split evenly), targets y = x + 0.3 sin(2 pi x) + 0.3 sin(4 pi x) + noise.
inline Dataset gen_foong1d(int n, double noise_std = 0.02, std::uint64_t seed = 0) {
  if (n <= 0) throw contract_error("gen_foong1d: n must be positive");
  if (noise_std < 0.0) throw contract_error("gen_foong1d: noise_std must be >= 0");
  Rng rng(seed);
  Dataset ds;
  ds.inputs.resize(n, 1);
  ds.targets.resize(n);
  ds.split.assign(static_cast<std::size_t>(n), Split::train);
  const int n_left = n / 2;
  for (int i = 0; i < n; ++i) {
    const double x = (i < n_left) ? rng.uniform(-1.0, -0.5) : rng.uniform(0.5, 1.0);
    ds.inputs(i, 0) = x;
    ds.targets[i] = x + 0.3 * std::sin(2.0 * M_PI * x) + 0.3 * std::sin(4.0 * M_PI * x) +
                    noise_std * rng.normal();
  }
  detail::shuffle_rows(ds, rng);
  return ds;
}

// Interleaved half-circles with Gaussian jitter; balanced classes. With
// noise_std = 0 every point lies exactly on one of the two unit half-circles
// (centers (0, 0) and (1, 0.5)).
inline Dataset gen_two_moons(int n, double noise_std = 0.1, std::uint64_t seed = 0) {
  if (n <= 0) throw contract_error("gen_two_moons: n must be positive");
  if (noise_std < 0.0) throw contract_error("gen_two_moons: noise_std must be >= 0");
  Rng rng(seed);
  Dataset ds;
  ds.inputs.resize(n, 2);
  ds.labels.assign(static_cast<std::size_t>(n), 0);
  ds.split.assign(static_cast<std::size_t>(n), Split::train);
  ds.num_classes = 2;
  const int n0 = n / 2;
  for (int i = 0; i < n; ++i) {
    const double t = rng.uniform(0.0, M_PI);
    double x, y;
    int label;
    if (i < n0) {
      x = std::cos(t);
      y = std::sin(t);
      label = 0;
    } else {
      x = 1.0 - std::cos(t);
      y = 0.5 - std::sin(t);
      label = 1;
    }
    ds.inputs(i, 0) = x + noise_std * rng.normal();
    ds.inputs(i, 1) = y + noise_std * rng.normal();
    ds.labels[static_cast<std::size_t>(i)] = label;
  }
  detail::shuffle_rows(ds, rng);
  return ds;
}

// Gaussian OOD cloud: mean = column mean of the reference inputs + shift,
// covariance scale^2 * I.
inline kernels::RowMat gen_ood_inputs(const Dataset& reference, const Eigen::VectorXd& shift,
                                      double scale, int n, std::uint64_t seed = 0) {
  if (n <= 0) throw contract_error("gen_ood_inputs: n must be positive");
  if (reference.size() == 0) throw contract_error("gen_ood_inputs: empty reference dataset");
  if (shift.size() != reference.dim()) {
    throw shape_error("gen_ood_inputs: shift dimension " + std::to_string(shift.size()) +
                      " != input dimension " + std::to_string(reference.dim()));
  }
  if (!(scale >= 0.0)) throw contract_error("gen_ood_inputs: scale must be >= 0");
  Rng rng(seed);
  const Eigen::VectorXd mean = reference.inputs.colwise().mean().transpose() + shift;
  kernels::RowMat out(n, reference.dim());
  for (int i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < reference.dim(); ++j)
      out(i, j) = mean[j] + scale * rng.normal();
  return out;
}

// Reassigns split tags: ceil(test_fraction * n) random rows become test.
inline void train_test_split(Dataset& ds, double test_fraction, std::uint64_t seed = 0) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) {
    throw contract_error("train_test_split: test_fraction must be in [0, 1]");
  }
  Rng rng(seed);
  const Eigen::Index n = ds.size();
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(rng.uniform01() * static_cast<double>(i + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  const auto n_test = static_cast<Eigen::Index>(
      std::ceil(test_fraction * static_cast<double>(n)));
  std::fill(ds.split.begin(), ds.split.end(), Split::train);
  for (Eigen::Index i = 0; i < n_test; ++i)
    ds.split[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = Split::test;
}

// Copy of the rows carrying the given tag.
inline Dataset subset(const Dataset& ds, Split which) {
  Dataset out;
  out.num_classes = ds.num_classes;
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < ds.split.size(); ++i)
    if (ds.split[i] == which) rows.push_back(static_cast<Eigen::Index>(i));
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.inputs.resize(m, ds.dim());
  if (ds.targets.size()) out.targets.resize(m);
  if (!ds.labels.empty()) out.labels.resize(static_cast<std::size_t>(m));
  out.split.assign(static_cast<std::size_t>(m), which);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index j = rows[static_cast<std::size_t>(i)];
    out.inputs.row(i) = ds.inputs.row(j);
    if (ds.targets.size()) out.targets[i] = ds.targets[j];
    if (!ds.labels.empty()) out.labels[static_cast<std::size_t>(i)] =
        ds.labels[static_cast<std::size_t>(j)];
  }
  return out;
}

inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw io_error("write_csv: cannot open " + path);
  f.precision(17);
  for (Eigen::Index j = 0; j < ds.dim(); ++j) f << "x" << j << ",";
  f << "y,split\n";
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    for (Eigen::Index j = 0; j < ds.dim(); ++j) f << ds.inputs(i, j) << ",";
    if (ds.is_classification()) f << ds.labels[static_cast<std::size_t>(i)];
    else f << ds.targets[i];
    f << ',' << (ds.split[static_cast<std::size_t>(i)] == Split::train ? "train" : "test")
      << '\n';
  }
  if (!f) throw io_error("write_csv: write failure on " + path);
}

inline Dataset read_csv(const std::string& path, bool classification) {
  std::ifstream f(path);
  if (!f) throw io_error("read_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw io_error("read_csv: empty file " + path);
  Eigen::Index dim = 0;
  {
    std::stringstream hs(line);
    std::string col;
    std::vector<std::string> cols;
    while (std::getline(hs, col, ',')) cols.push_back(col);
    if (cols.size() < 3 || cols[cols.size() - 2] != "y" || cols.back() != "split") {
      throw io_error("read_csv: unexpected header in " + path);
    }
    dim = static_cast<Eigen::Index>(cols.size()) - 2;
  }
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  std::vector<Split> sp;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (static_cast<Eigen::Index>(cells.size()) != dim + 2) {
      throw io_error("read_csv: malformed row in " + path);
    }
    std::vector<double> row(static_cast<std::size_t>(dim));
    for (Eigen::Index j = 0; j < dim; ++j)
      row[static_cast<std::size_t>(j)] = std::stod(cells[static_cast<std::size_t>(j)]);
    xs.push_back(std::move(row));
    ys.push_back(std::stod(cells[static_cast<std::size_t>(dim)]));
    if (cells.back() == "train") sp.push_back(Split::train);
    else if (cells.back() == "test") sp.push_back(Split::test);
    else throw io_error("read_csv: bad split tag '" + cells.back() + "' in " + path);
  }
  Dataset ds;
  const auto n = static_cast<Eigen::Index>(xs.size());
  ds.inputs.resize(n, dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < dim; ++j)
      ds.inputs(i, j) = xs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  ds.split = std::move(sp);
  if (classification) {
    ds.labels.resize(static_cast<std::size_t>(n));
    int maxl = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int l = static_cast<int>(std::lround(ys[static_cast<std::size_t>(i)]));
      ds.labels[static_cast<std::size_t>(i)] = l;
      maxl = std::max(maxl, l);
    }
    ds.num_classes = maxl + 1;
  } else {
    ds.targets.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) ds.targets[i] = ys[static_cast<std::size_t>(i)];
  }
  return ds;
}

}  // namespace ltnode
