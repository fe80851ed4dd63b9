#include "legato/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace legato {

namespace {
constexpr std::uint64_t kLatentStream = 0x6c6174656e74ULL;
constexpr std::uint64_t kRenderStream = 0x72656e646572ULL;
constexpr std::size_t kRenderHidden = 32;

void check_w(double w) {
  if (!(w >= 0.0 && w <= 1.0)) {
    throw TensorError("simulate: correlation w must be in [0,1], got " + std::to_string(w));
  }
}
}  // namespace

std::string to_string(SimSpec::Mode m) {
  return m == SimSpec::Mode::Global ? "global" : "local";
}

SimSpec::Mode mode_from_string(const std::string& s) {
  if (s == "global") return SimSpec::Mode::Global;
  if (s == "local") return SimSpec::Mode::Local;
  throw TensorError("unknown simulation mode '" + s + "'");
}

nlohmann::json SimSpec::to_json() const {
  return {{"k", num_views},          {"w", correlation},
          {"mode", to_string(mode)}, {"n", num_samples},
          {"feature_dim", feature_dim}, {"seed", seed}};
}

SimSpec SimSpec::from_json(const nlohmann::json& j) {
  SimSpec s;
  s.num_views = j.at("k");
  s.correlation = j.at("w");
  s.mode = mode_from_string(j.at("mode"));
  s.num_samples = j.at("n");
  s.feature_dim = j.at("feature_dim");
  s.seed = j.at("seed");
  return s;
}

Tensor simulate_global(const SimSpec& spec) {
  check_w(spec.correlation);
  const std::size_t n = spec.num_samples, k = spec.num_views;
  const double w = spec.correlation;
  Rng rng(split_seed(spec.seed, kLatentStream));
  Tensor z({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      z.at(i, j) = rng.normal(static_cast<double>(j + 1), 1.0);
    }
    const double z1 = z.at(i, 0);  // pre-mix draw is shared with every view
    for (std::size_t j = 0; j < k; ++j) z.at(i, j) = (1.0 - w) * z.at(i, j) + w * z1;
  }
  return z;
}

Tensor simulate_local(const SimSpec& spec) {
  check_w(spec.correlation);
  if (spec.num_views % 2 != 0) {
    throw TensorError("simulate_local: K must be even, got " + std::to_string(spec.num_views));
  }
  const std::size_t n = spec.num_samples, k = spec.num_views;
  const double w = spec.correlation;
  const double tail = std::sqrt(std::max(0.0, 1.0 - w * w));
  Rng rng(split_seed(spec.seed, kLatentStream));
  Tensor z({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k / 2; ++p) {
      const double u = rng.normal();
      const double v = rng.normal();
      z.at(i, 2 * p) = static_cast<double>(2 * p + 1) + u;
      z.at(i, 2 * p + 1) = static_cast<double>(2 * p + 2) + w * u + tail * v;
    }
  }
  return z;
}

Tensor simulate_latents(const SimSpec& spec) {
  return spec.mode == SimSpec::Mode::Global ? simulate_global(spec) : simulate_local(spec);
}

std::vector<Tensor> render_views(const Tensor& latents, const SimSpec& spec) {
  if (latents.ndim() != 2 || latents.dim(1) != spec.num_views) {
    throw TensorError("render_views: latents must be (N," + std::to_string(spec.num_views) +
                      "), got " + latents.shape_str());
  }
  const std::size_t n = latents.dim(0), k = spec.num_views, d = spec.feature_dim;
  std::vector<Tensor> views;
  views.reserve(k);
  for (std::size_t view = 0; view < k; ++view) {
    Rng rng(split_seed(spec.seed, kRenderStream + view));
    std::vector<double> w1(kRenderHidden);
    for (auto& v : w1) v = rng.normal();  // fan_in = 1
    std::vector<double> w2(kRenderHidden * d);
    const double scale2 = 1.0 / std::sqrt(static_cast<double>(kRenderHidden));
    for (auto& v : w2) v = rng.normal() * scale2;

    Tensor out({n, d});
    std::vector<double> hidden(kRenderHidden);
    for (std::size_t i = 0; i < n; ++i) {
      const double z = latents.at(i, view);
      for (std::size_t h = 0; h < kRenderHidden; ++h) hidden[h] = std::tanh(z * w1[h]);
      double* row = out.data() + i * d;
      for (std::size_t h = 0; h < kRenderHidden; ++h) {
        const double hv = hidden[h];
        const double* w2row = w2.data() + h * d;
        for (std::size_t f = 0; f < d; ++f) row[f] += hv * w2row[f];
      }
    }
    views.push_back(std::move(out));
  }
  return views;
}

Dataset simulate(const SimSpec& spec) {
  Dataset ds;
  ds.latents = simulate_latents(spec);
  ds.views = render_views(ds.latents, spec);
  nlohmann::json renderer_seeds = nlohmann::json::array();
  for (std::size_t v = 0; v < spec.num_views; ++v) {
    renderer_seeds.push_back(split_seed(spec.seed, kRenderStream + v));
  }
  ds.manifest = {{"schema_version", 1}, {"spec", spec.to_json()},
                 {"renderer_seeds", renderer_seeds}};
  return ds;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::size_t> Dataset::view_dims() const {
  std::vector<std::size_t> dims;
  dims.reserve(views.size());
  for (const auto& v : views) dims.push_back(v.dim(1));
  return dims;
}

namespace {

void write_csv(const std::filesystem::path& path, const std::string& col_prefix,
               const Tensor& t) {
  std::ofstream out(path);
  if (!out) throw TensorError("cannot write " + path.string());
  const std::size_t n = t.dim(0), d = t.dim(1);
  for (std::size_t j = 0; j < d; ++j) {
    if (j) out << ',';
    out << col_prefix << (j + 1);
  }
  out << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      if (j) out << ',';
      out << format_double(t.at(i, j));
    }
    out << '\n';
  }
}

Tensor read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TensorError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw TensorError("empty csv " + path.string());
  std::size_t cols = 1;
  for (char c : line) {
    if (c == ',') ++cols;
  }
  std::vector<double> data;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const char* p = line.c_str();
    std::size_t got = 0;
    while (*p) {
      char* end = nullptr;
      data.push_back(std::strtod(p, &end));
      ++got;
      if (end == p) throw TensorError("bad number in " + path.string());
      p = *end == ',' ? end + 1 : end;
    }
    if (got != cols) throw TensorError("ragged row in " + path.string());
  }
  const std::size_t rows = data.size() / cols;
  return Tensor({rows, cols}, std::move(data));
}

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& dir, bool force) {
  if (std::filesystem::exists(dir) && !std::filesystem::is_empty(dir) && !force) {
    throw TensorError("output directory " + dir.string() +
                      " exists and is not empty (use --force to overwrite)");
  }
  std::filesystem::create_directories(dir);
  for (std::size_t v = 0; v < ds.views.size(); ++v) {
    write_csv(dir / ("view_" + std::to_string(v + 1) + ".csv"), "f", ds.views[v]);
  }
  if (ds.has_latents()) write_csv(dir / "latents.csv", "z", ds.latents);
  if (!ds.manifest.is_null()) {
    std::ofstream out(dir / "sim_manifest.json");
    out << ds.manifest.dump(2) << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  for (std::size_t v = 1;; ++v) {
    const auto path = dir / ("view_" + std::to_string(v) + ".csv");
    if (!std::filesystem::exists(path)) break;
    ds.views.push_back(read_csv(path));
  }
  if (ds.views.empty()) {
    throw TensorError("no view_<k>.csv files found in " + dir.string());
  }
  for (const auto& v : ds.views) {
    if (v.dim(0) != ds.views[0].dim(0)) {
      throw TensorError("views in " + dir.string() + " disagree on sample count");
    }
  }
  if (std::filesystem::exists(dir / "latents.csv")) {
    ds.latents = read_csv(dir / "latents.csv");
    if (ds.latents.dim(0) != ds.num_samples()) {
      throw TensorError("latents.csv row count does not match views");
    }
  }
  if (std::filesystem::exists(dir / "sim_manifest.json")) {
    std::ifstream in(dir / "sim_manifest.json");
    ds.manifest = nlohmann::json::parse(in);
  }
  return ds;
}

}  // namespace legato
