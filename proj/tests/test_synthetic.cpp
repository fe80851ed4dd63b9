#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "legato/synthetic.hpp"

using namespace legato;

namespace {

double column_mean(const Tensor& t, std::size_t c) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.dim(0); ++i) s += t.at(i, c);
  return s / static_cast<double>(t.dim(0));
}

double column_corr(const Tensor& t, std::size_t a, std::size_t b) {
  const std::size_t n = t.dim(0);
  double ma = column_mean(t, a), mb = column_mean(t, b);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = t.at(i, a) - ma, db = t.at(i, b) - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  return cov / std::sqrt(va * vb);
}

SimSpec spec_of(std::size_t k, double w, SimSpec::Mode mode, std::size_t n,
                std::uint64_t seed = 7, std::size_t feature_dim = 5) {
  SimSpec s;
  s.num_views = k;
  s.correlation = w;
  s.mode = mode;
  s.num_samples = n;
  s.feature_dim = feature_dim;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("simulation is deterministic given the seed") {
  SimSpec s = spec_of(4, 0.5, SimSpec::Mode::Local, 50);
  Dataset a = simulate(s);
  Dataset b = simulate(s);
  for (std::size_t i = 0; i < a.latents.size(); ++i) CHECK(a.latents[i] == b.latents[i]);
  for (std::size_t v = 0; v < 4; ++v) {
    for (std::size_t i = 0; i < a.views[v].size(); ++i) {
      CHECK(a.views[v][i] == b.views[v][i]);
    }
  }
}

TEST_CASE("global mode, w=0: independent columns with mean k and unit variance") {
  const std::size_t n = 10000;
  Tensor z = simulate_global(spec_of(4, 0.0, SimSpec::Mode::Global, n));
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(std::fabs(column_mean(z, c) - static_cast<double>(c + 1)) < 0.1);
    double var = 0.0;
    const double m = column_mean(z, c);
    for (std::size_t i = 0; i < n; ++i) var += (z.at(i, c) - m) * (z.at(i, c) - m);
    var /= static_cast<double>(n);
    CHECK(std::fabs(var - 1.0) < 0.08);  // ~5 sigma at N=10000
  }
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b) CHECK(std::fabs(column_corr(z, a, b)) < 0.05);
}

TEST_CASE("global mode, w=1: every column equals column 1") {
  Tensor z = simulate_global(spec_of(5, 1.0, SimSpec::Mode::Global, 100));
  for (std::size_t i = 0; i < 100; ++i)
    for (std::size_t c = 1; c < 5; ++c) CHECK(z.at(i, c) == z.at(i, 0));
}

TEST_CASE("global mode, w=0.5: corr(z_k, z_1) approaches 1/sqrt(2)") {
  Tensor z = simulate_global(spec_of(4, 0.5, SimSpec::Mode::Global, 10000));
  const double target = 1.0 / std::sqrt(2.0);  // 0.5/sqrt(0.25+0.25)
  for (std::size_t c = 1; c < 4; ++c) {
    CHECK(std::fabs(column_corr(z, 0, c) - target) < 0.03);
  }
}

TEST_CASE("local mode, w=0: all columns pairwise uncorrelated") {
  Tensor z = simulate_local(spec_of(6, 0.0, SimSpec::Mode::Local, 10000));
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t b = a + 1; b < 6; ++b) CHECK(std::fabs(column_corr(z, a, b)) < 0.05);
}

TEST_CASE("local mode: within-pair correlation approaches w, cross-pair zero") {
  const double w = 0.6;
  Tensor z = simulate_local(spec_of(6, w, SimSpec::Mode::Local, 10000));
  for (std::size_t p = 0; p < 3; ++p) {
    CHECK(std::fabs(column_corr(z, 2 * p, 2 * p + 1) - w) < 0.03);
  }
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t b = a + 1; b < 6; ++b) {
      if (a / 2 == b / 2) continue;
      CHECK(std::fabs(column_corr(z, a, b)) < 0.03);
    }
  // First pair means are (1, 2).
  CHECK(std::fabs(column_mean(z, 0) - 1.0) < 0.1);
  CHECK(std::fabs(column_mean(z, 1) - 2.0) < 0.1);
}

TEST_CASE("local mode rejects odd K; both modes reject bad w") {
  CHECK_THROWS_AS(simulate_local(spec_of(5, 0.5, SimSpec::Mode::Local, 10)), TensorError);
  CHECK_THROWS_AS(simulate_global(spec_of(4, -0.1, SimSpec::Mode::Global, 10)), TensorError);
  CHECK_THROWS_AS(simulate_global(spec_of(4, 1.5, SimSpec::Mode::Global, 10)), TensorError);
}

TEST_CASE("rendering zero latents gives zero views (zero biases)") {
  SimSpec s = spec_of(3, 0.0, SimSpec::Mode::Global, 4, 11, 8);
  Tensor z({4, 3});
  auto views = render_views(z, s);
  for (const auto& v : views) {
    REQUIRE(v.shape() == std::vector<std::size_t>{4, 8});
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == 0.0);
  }
}

TEST_CASE("rendering is deterministic and view outputs saturate") {
  SimSpec s = spec_of(2, 0.0, SimSpec::Mode::Global, 3, 5, 6);
  Tensor z({3, 2}, {0.3, -1.0, 2.0, 0.1, -0.5, 0.7});
  auto a = render_views(z, s);
  auto b = render_views(z, s);
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t i = 0; i < a[v].size(); ++i) CHECK(a[v][i] == b[v][i]);

  // Tanh saturates: beyond the knee the rendered features stop changing.
  Tensor big({1, 2}, {1e3, 1e3});
  Tensor bigger({1, 2}, {1e6, 1e6});
  auto va = render_views(big, s);
  auto vb = render_views(bigger, s);
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t i = 0; i < va[v].size(); ++i) CHECK(va[v][i] == vb[v][i]);
}

TEST_CASE("dataset writes round-trip exactly and honor force") {
  const auto dir = std::filesystem::temp_directory_path() / "legato_test_ds";
  std::filesystem::remove_all(dir);

  SimSpec s = spec_of(3, 0.25, SimSpec::Mode::Global, 20, 3, 4);
  Dataset ds = simulate(s);
  write_dataset(ds, dir, false);
  CHECK(std::filesystem::exists(dir / "view_1.csv"));
  CHECK(std::filesystem::exists(dir / "view_3.csv"));
  CHECK(std::filesystem::exists(dir / "latents.csv"));
  CHECK(std::filesystem::exists(dir / "sim_manifest.json"));

  CHECK_THROWS_AS(write_dataset(ds, dir, false), TensorError);

  Dataset loaded = load_dataset(dir);
  REQUIRE(loaded.num_views() == 3);
  REQUIRE(loaded.num_samples() == 20);
  REQUIRE(loaded.has_latents());
  for (std::size_t v = 0; v < 3; ++v)
    for (std::size_t i = 0; i < ds.views[v].size(); ++i)
      CHECK(ds.views[v][i] == loaded.views[v][i]);
  for (std::size_t i = 0; i < ds.latents.size(); ++i) CHECK(ds.latents[i] == loaded.latents[i]);
  CHECK(SimSpec::from_json(loaded.manifest.at("spec")).correlation == 0.25);

  std::filesystem::remove_all(dir);
}

TEST_CASE("empty dataset writes headers only and loads back") {
  const auto dir = std::filesystem::temp_directory_path() / "legato_test_ds0";
  std::filesystem::remove_all(dir);
  SimSpec s = spec_of(2, 0.0, SimSpec::Mode::Global, 0, 1, 3);
  Dataset ds = simulate(s);
  write_dataset(ds, dir, false);
  Dataset loaded = load_dataset(dir);
  CHECK(loaded.num_views() == 2);
  CHECK(loaded.num_samples() == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("loading a directory without views fails") {
  const auto dir = std::filesystem::temp_directory_path() / "legato_test_ds_none";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  CHECK_THROWS_AS(load_dataset(dir), TensorError);
  std::filesystem::remove_all(dir);
}
