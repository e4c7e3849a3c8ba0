#pragma once

// Shared helpers for the unit suites: seeded tensor builders, a central
// finite-difference harness, and scratch directories.

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "pimpnet/rng.hpp"
#include "pimpnet/tape.hpp"
#include "pimpnet/tensor.hpp"

namespace testsupport {

inline pimpnet::TensorPtr random_tensor(std::vector<int> shape, pimpnet::Rng& rng,
                                        float lo, float hi, bool requires_grad = true) {
  auto t = pimpnet::zeros(std::move(shape), requires_grad);
  for (auto& v : t->data) v = float(rng.uniform(double(lo), double(hi)));
  return t;
}

// Central finite difference of a freshly rebuilt forward pass with respect to
// one stored float. The forward runs in float32, so the measurable resolution
// is about 1e-4 at h = 1e-3 for unit-scale losses; check_gradient applies the
// relative bound where the derivative is large enough to rise above that
// floor and an absolute bound below it.
inline double central_difference(const std::function<double()>& eval, float& slot, float h) {
  const float keep = slot;
  slot = keep + h;
  const double fp = eval();
  slot = keep - h;
  const double fm = eval();
  slot = keep;
  return (fp - fm) / (2.0 * double(h));
}

inline constexpr float kFdStep = 1e-3f;
inline constexpr double kFdRelTol = 1e-3;
inline constexpr double kFdSmallScale = 0.1;
inline constexpr double kFdAbsTol = 1e-4;

inline bool fd_within(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale >= kFdSmallScale) return std::abs(a - b) / scale < kFdRelTol;
  return std::abs(a - b) < kFdAbsTol;
}

inline void check_gradient(double analytic, double fd, const char* what) {
  INFO(what, ": analytic ", analytic, " vs finite difference ", fd);
  CHECK(fd_within(analytic, fd));
}

// Rebuilds the graph via make_loss for every probe. Samples up to
// coords_per_tensor entries of each parameter. A probe whose h and 2h
// estimates disagree straddles a kink of the piecewise forward (max-pool
// ties, ReLU boundaries) where a central difference carries no information;
// the detection never looks at the analytic value, so a wrong backward still
// fails on the stable probes. Skipped probes are counted and capped.
inline void check_gradients(const std::vector<pimpnet::TensorPtr>& params,
                            const std::function<pimpnet::TensorPtr(pimpnet::Tape&)>& make_loss,
                            int coords_per_tensor, pimpnet::Rng& pick,
                            const char* what) {
  pimpnet::Tape tape;
  auto loss = make_loss(tape);
  tape.backward(loss);
  std::vector<std::vector<float>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p->grad);

  const auto eval = [&make_loss]() {
    pimpnet::Tape fresh;
    return double(make_loss(fresh)->item());
  };
  int checked = 0, unstable = 0;
  for (auto& p : params) {
    const int n = int(p->data.size());
    for (int c = 0; c < coords_per_tensor; ++c) {
      const int j = n <= coords_per_tensor ? c : int(pick.uniform_index(std::uint64_t(n)));
      if (j >= n) break;
      float& slot = p->data[std::size_t(j)];
      const double fd = central_difference(eval, slot, kFdStep);
      const double fd_wide = central_difference(eval, slot, 2.0f * kFdStep);
      if (!fd_within(fd, fd_wide)) {
        ++unstable;
        continue;
      }
      check_gradient(double(analytic[std::size_t(&p - params.data())][std::size_t(j)]), fd, what);
      ++checked;
    }
  }
  INFO(what, ": ", unstable, " unstable probes, ", checked, " checked");
  CHECK(unstable * 4 <= checked);
}

// Unique scratch directory, removed when the guard dies.
struct ScratchDir {
  std::filesystem::path path;

  explicit ScratchDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("pimpnet_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~ScratchDir() { std::filesystem::remove_all(path); }

  std::string file(const std::string& name) const { return (path / name).string(); }
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Binary surgery for the corruption-matrix tests.
inline void patch_file(const std::string& path, std::size_t offset,
                       const std::vector<std::uint8_t>& bytes) {
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  REQUIRE(bool(f));
  f.seekp(std::streamoff(offset));
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  REQUIRE(bool(f));
}

inline void truncate_file(const std::string& path, std::size_t drop) {
  const std::string all = read_file(path);
  REQUIRE(all.size() > drop);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(all.data(), std::streamsize(all.size() - drop));
}

inline void append_bytes(const std::string& path, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  for (std::size_t i = 0; i < n; ++i) out.put('\0');
}

inline std::size_t find_offset(const std::string& path, const std::string& pattern) {
  const auto pos = read_file(path).find(pattern);
  REQUIRE(pos != std::string::npos);
  return pos;
}

}  // namespace testsupport
