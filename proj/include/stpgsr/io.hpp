#pragma once

// CSV matrices, dataset manifests, synthetic data, reports and checkpoints.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "stpgsr/graph.hpp"
#include "stpgsr/metrics.hpp"
#include "stpgsr/models.hpp"
#include "stpgsr/training.hpp"

namespace stpgsr::io {

namespace fs = std::filesystem;
using nlohmann::json;

/// Writes to a sibling temporary file, then renames over `path`.
inline void write_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Shortest-round-trip-safe decimal text (17 significant digits).
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ------------------------------------------------------------------ matrices

inline std::string matrix_to_csv(const Connectome& c) {
  const std::size_t n = c.size();
  std::string out;
  out.reserve(n * n * 24);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j) out += ',';
      out += format_double(c(i, j));
    }
    out += '\n';
  }
  return out;
}

/// Parses an n x n CSV of decimal reals into a validated Connectome.
/// Asymmetry up to 1e-12 is averaged away; anything larger is rejected.
inline Connectome matrix_from_csv(std::string_view text, const std::string& origin = "<memory>") {
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::size_t col = 0;
    std::size_t fpos = 0;
    while (true) {
      std::size_t comma = line.find(',', fpos);
      std::string_view field = line.substr(fpos, comma == std::string_view::npos ? std::string_view::npos : comma - fpos);
      while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
      while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
      double v = 0.0;
      const char* first = field.data();
      const char* last = field.data() + field.size();
      if (!field.empty() && *first == '+') ++first;
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (field.empty() || ec != std::errc{} || ptr != last) {
        throw ValidationError(origin + ": non-numeric field at row " + std::to_string(rows) + ", col " + std::to_string(col));
      }
      values.push_back(v);
      ++col;
      if (comma == std::string_view::npos) break;
      fpos = comma + 1;
    }
    if (rows == 0) {
      cols = col;
    } else if (col != cols) {
      throw ValidationError(origin + ": ragged row " + std::to_string(rows) + " has " + std::to_string(col) + " fields, expected " +
                            std::to_string(cols));
    }
    ++rows;
  }
  if (rows != cols) {
    throw ValidationError(origin + ": matrix is " + std::to_string(rows) + "x" + std::to_string(cols) + ", not square");
  }
  try {
    return Connectome::from_dense(rows, std::move(values), 1e-12);
  } catch (const ValidationError& e) {
    throw ValidationError(origin + ": " + e.what());
  }
}

inline Connectome read_matrix(const fs::path& path) { return matrix_from_csv(read_file(path), path.string()); }

inline void write_matrix(const Connectome& c, const fs::path& path) { write_atomic(path, matrix_to_csv(c)); }

// ------------------------------------------------------------------ manifests & datasets

struct ManifestEntry {
  std::string id;
  std::string lr; ///< path relative to the manifest directory (or absolute)
  std::string hr;
};

struct DatasetManifest {
  std::size_t n_s = 0;
  std::size_t n_t = 0;
  std::uint64_t seed = 0;
  std::string kind = "synthetic";
  std::vector<ManifestEntry> samples;
};

inline json to_json(const DatasetManifest& m) {
  json samples = json::array();
  for (const auto& s : m.samples) samples.push_back({{"id", s.id}, {"lr", s.lr}, {"hr", s.hr}});
  return {{"n_s", m.n_s}, {"n_t", m.n_t}, {"seed", m.seed}, {"kind", m.kind}, {"samples", samples}};
}

inline DatasetManifest manifest_from_json(const json& j) {
  try {
    DatasetManifest m;
    m.n_s = j.at("n_s").get<std::size_t>();
    m.n_t = j.at("n_t").get<std::size_t>();
    m.seed = j.value("seed", std::uint64_t{0});
    m.kind = j.value("kind", std::string("unknown"));
    for (const auto& s : j.at("samples")) {
      m.samples.push_back({s.at("id").get<std::string>(), s.at("lr").get<std::string>(), s.at("hr").get<std::string>()});
    }
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
}

inline void write_manifest(const DatasetManifest& m, const fs::path& path) { write_atomic(path, to_json(m).dump(2) + "\n"); }

inline DatasetManifest read_manifest(const fs::path& path) {
  try {
    return manifest_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

/// Loads every sample of a manifest, rejecting files that violate the
/// connectome invariants or the declared sizes.
inline std::vector<Sample> load_dataset(const fs::path& manifest_path, DatasetManifest* manifest_out = nullptr) {
  DatasetManifest m = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  std::vector<Sample> out;
  for (const auto& e : m.samples) {
    Sample s{e.id, read_matrix(resolve(e.lr)), read_matrix(resolve(e.hr))};
    if (s.lr.size() != m.n_s || s.hr.size() != m.n_t) {
      throw ValidationError("sample '" + e.id + "': sizes " + std::to_string(s.lr.size()) + "/" + std::to_string(s.hr.size()) +
                            " differ from manifest " + std::to_string(m.n_s) + "/" + std::to_string(m.n_t));
    }
    out.push_back(std::move(s));
  }
  if (manifest_out) *manifest_out = std::move(m);
  return out;
}

// ------------------------------------------------------------------ synthetic data

struct SyntheticConfig {
  std::size_t samples = 30;
  std::size_t n_s = 20;
  std::size_t n_t = 30;
  double noise = 0.05;
  std::size_t modules = 4;
  std::uint64_t seed = 7;

  void validate() const {
    if (samples < 1) throw DomainError("synthetic: need at least one sample");
    if (n_s < 2) throw DomainError("synthetic: n_s must be >= 2");
    if (n_s >= n_t) throw DomainError("synthetic: n_s must be smaller than n_t");
    if (!(noise >= 0.0 && noise < 1.0)) throw DomainError("synthetic: noise must lie in [0, 1)");
    if (modules < 1 || modules > n_t) throw DomainError("synthetic: modules must lie in [1, n_t]");
  }
};

/// Planted module of HR node i (balanced contiguous blocks).
inline std::size_t planted_module(std::size_t i, std::size_t n_t, std::size_t modules) { return i * modules / n_t; }

/// Dataset-level column-stochastic aggregation map P (n_t x n_s, row-major):
/// each HR node belongs mostly to one LR parent and leaks softly to others.
inline std::vector<double> aggregation_map(const SyntheticConfig& cfg) {
  std::mt19937_64 rng(derive_seed(cfg.seed, 0xA66));
  std::uniform_real_distribution<double> leak(0.0, 0.15);
  std::vector<double> p(cfg.n_t * cfg.n_s, 0.0);
  for (std::size_t t = 0; t < cfg.n_t; ++t) {
    const std::size_t parent = t * cfg.n_s / cfg.n_t;
    for (std::size_t s = 0; s < cfg.n_s; ++s) p[t * cfg.n_s + s] = s == parent ? 1.0 : leak(rng) * leak(rng);
  }
  for (std::size_t s = 0; s < cfg.n_s; ++s) {
    double col = 0.0;
    for (std::size_t t = 0; t < cfg.n_t; ++t) col += p[t * cfg.n_s + s];
    for (std::size_t t = 0; t < cfg.n_t; ++t) p[t * cfg.n_s + s] /= col;
  }
  return p;
}

/// Min-max over off-diagonal entries into [0, 1], diagonal zero.
inline Connectome minmax_offdiag(std::size_t n, std::vector<double> w) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) {
        lo = std::min(lo, w[i * n + j]);
        hi = std::max(hi, w[i * n + j]);
      }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) w[i * n + j] = (i == j || hi <= lo) ? 0.0 : (w[i * n + j] - lo) / (hi - lo);
  return Connectome::from_dense(n, std::move(w));
}

/// One LR/HR pair. HR: planted-module weights; LR: min-max(P^T A_t P) plus
/// symmetric uniform noise of amplitude `noise`, clipped to [0, 1].
inline Sample synthetic_sample(const SyntheticConfig& cfg, const std::vector<double>& p, std::size_t index) {
  std::mt19937_64 rng(derive_seed(cfg.seed, 10'000 + index));
  std::uniform_real_distribution<double> within(0.55, 1.0);
  std::uniform_real_distribution<double> between(0.0, 0.35);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const std::size_t nt = cfg.n_t, ns = cfg.n_s;
  std::vector<double> hr(nt * nt, 0.0);
  for (std::size_t i = 0; i < nt; ++i)
    for (std::size_t j = i + 1; j < nt; ++j) {
      const bool same = planted_module(i, nt, cfg.modules) == planted_module(j, nt, cfg.modules);
      hr[i * nt + j] = hr[j * nt + i] = same ? within(rng) : between(rng);
    }
  Connectome a_t = minmax_offdiag(nt, std::move(hr));

  // P^T A_t P
  std::vector<double> ap(nt * ns, 0.0);
  for (std::size_t i = 0; i < nt; ++i)
    for (std::size_t k = 0; k < nt; ++k) {
      const double a = a_t(i, k);
      if (a == 0.0) continue;
      for (std::size_t s = 0; s < ns; ++s) ap[i * ns + s] += a * p[k * ns + s];
    }
  std::vector<double> lr(ns * ns, 0.0);
  for (std::size_t r = 0; r < ns; ++r)
    for (std::size_t s = 0; s < ns; ++s) {
      double v = 0.0;
      for (std::size_t i = 0; i < nt; ++i) v += p[i * ns + r] * ap[i * ns + s];
      lr[r * ns + s] = v;
    }
  for (std::size_t r = 0; r < ns; ++r)
    for (std::size_t s = r + 1; s < ns; ++s) lr[s * ns + r] = lr[r * ns + s]; // exact symmetry
  Connectome scaled = minmax_offdiag(ns, std::move(lr));
  std::vector<double> noisy(scaled.data().begin(), scaled.data().end());
  for (std::size_t r = 0; r < ns; ++r)
    for (std::size_t s = r + 1; s < ns; ++s) {
      const double v = std::clamp(noisy[r * ns + s] + cfg.noise * unit(rng), 0.0, 1.0);
      noisy[r * ns + s] = noisy[s * ns + r] = v;
    }
  char id[32];
  std::snprintf(id, sizeof id, "s%04zu", index);
  return Sample{id, Connectome::from_dense(ns, std::move(noisy)), std::move(a_t)};
}

/// In-memory generation; a pure function of the config.
inline std::vector<Sample> generate_samples(const SyntheticConfig& cfg) {
  cfg.validate();
  const auto p = aggregation_map(cfg);
  std::vector<Sample> out;
  out.reserve(cfg.samples);
  for (std::size_t i = 0; i < cfg.samples; ++i) out.push_back(synthetic_sample(cfg, p, i));
  return out;
}

/// Writes <id>_lr.csv / <id>_hr.csv for every sample plus manifest.json.
inline DatasetManifest generate_synthetic(const SyntheticConfig& cfg, const fs::path& out_dir) {
  auto samples = generate_samples(cfg);
  DatasetManifest m;
  m.n_s = cfg.n_s;
  m.n_t = cfg.n_t;
  m.seed = cfg.seed;
  m.kind = "synthetic-planted-modular";
  for (const auto& s : samples) {
    const std::string lr = s.id + "_lr.csv", hr = s.id + "_hr.csv";
    write_matrix(s.lr, out_dir / lr);
    write_matrix(s.hr, out_dir / hr);
    m.samples.push_back({s.id, lr, hr});
  }
  write_manifest(m, out_dir / "manifest.json");
  return m;
}

// ------------------------------------------------------------------ reports

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const topo::MetricsReport& r) {
  json per_sample = json::array();
  for (const auto& s : r.per_sample) {
    json metrics = json::object(), means = json::object(), errors = json::object();
    for (const auto& name : topo::metric_names()) {
      const auto& v = s.values.at(name);
      metrics[name] = optional_number(v.mae);
      means[name] = optional_number(v.graph_mean_diff);
      if (!v.error.empty()) errors[name] = v.error;
    }
    per_sample.push_back({{"id", s.id}, {"metrics", metrics}, {"graph_mean_diff", means}, {"errors", errors}});
  }
  json aggregate = json::object();
  for (const auto& name : topo::metric_names()) aggregate[name] = optional_number(r.aggregate.at(name));
  return {{"model", r.model}, {"fold", r.fold}, {"per_sample", per_sample}, {"aggregate", aggregate}};
}

/// Checks a report object against the documented key set.
inline void validate_report_json(const json& j) {
  for (const char* key : {"model", "fold", "per_sample", "aggregate"})
    if (!j.contains(key)) throw ValidationError(std::string("report: missing key '") + key + "'");
  for (const auto& name : topo::metric_names())
    if (!j.at("aggregate").contains(name)) throw ValidationError("report: aggregate lacks '" + name + "'");
  for (const auto& s : j.at("per_sample")) {
    for (const char* key : {"id", "metrics", "graph_mean_diff", "errors"})
      if (!s.contains(key)) throw ValidationError(std::string("report: sample missing key '") + key + "'");
    if (s.at("metrics").size() != topo::metric_names().size()) throw ValidationError("report: sample metric count");
  }
}

inline void write_report(const topo::MetricsReport& r, const fs::path& path) { write_atomic(path, to_json(r).dump(2) + "\n"); }

/// One row per sample x metric: model,fold,sample,metric,mae,graph_mean_diff
inline std::string report_csv(const topo::MetricsReport& r) {
  std::string out = "model,fold,sample,metric,mae,graph_mean_diff\n";
  for (const auto& s : r.per_sample)
    for (const auto& name : topo::metric_names()) {
      const auto& v = s.values.at(name);
      out += r.model + "," + std::to_string(r.fold) + "," + s.id + "," + name + "," + (v.mae ? format_double(*v.mae) : "") + "," +
             (v.graph_mean_diff ? format_double(*v.graph_mean_diff) : "") + "\n";
    }
  return out;
}

inline std::string history_csv(const TrainHistory& h) {
  std::string out = "epoch,loss,seconds\n";
  for (std::size_t e = 0; e < h.epoch_loss.size(); ++e)
    out += std::to_string(e + 1) + "," + format_double(h.epoch_loss[e]) + "," + format_double(h.epoch_seconds[e]) + "\n";
  return out;
}

// ------------------------------------------------------------------ checkpoints

inline constexpr std::string_view checkpoint_format = "stpgsr-checkpoint";
inline constexpr int checkpoint_version = 1;

struct CheckpointMeta {
  ModelKind kind = ModelKind::stp_gsr;
  std::size_t n_s = 0;
  std::size_t n_t = 0;
  std::uint64_t seed = 0;      ///< model initialisation seed
  std::uint64_t eval_seed = 0; ///< seed used for metric evaluation
  json config = json::object();
};

inline json checkpoint_json(SrModel& model, const CheckpointMeta& meta) {
  json params = json::array();
  for (auto* p : model.parameters()) {
    params.push_back({{"name", p->name}, {"shape", {p->shape.rows, p->shape.cols}}, {"values", p->value}});
  }
  return {{"format", checkpoint_format},
          {"version", checkpoint_version},
          {"model", to_string(model.kind())},
          {"n_s", model.n_s()},
          {"n_t", model.n_t()},
          {"seed", meta.seed},
          {"eval_seed", meta.eval_seed},
          {"config", meta.config},
          {"params", params}};
}

inline void write_checkpoint(SrModel& model, const CheckpointMeta& meta, const fs::path& path) {
  write_atomic(path, checkpoint_json(model, meta).dump() + "\n");
}

/// Rebuilds a model from checkpoint JSON; every parameter must be present with its exact shape.
inline std::unique_ptr<SrModel> checkpoint_from_json(const json& j, CheckpointMeta* meta_out = nullptr) {
  try {
    if (j.at("format").get<std::string>() != checkpoint_format) throw ValidationError("checkpoint: wrong format tag");
    if (j.at("version").get<int>() != checkpoint_version) throw ValidationError("checkpoint: unsupported version");
    CheckpointMeta meta;
    meta.kind = parse_model_kind(j.at("model").get<std::string>());
    meta.n_s = j.at("n_s").get<std::size_t>();
    meta.n_t = j.at("n_t").get<std::size_t>();
    meta.seed = j.at("seed").get<std::uint64_t>();
    meta.eval_seed = j.value("eval_seed", std::uint64_t{0});
    meta.config = j.value("config", json::object());
    auto model = make_model(meta.kind, meta.n_s, meta.n_t, meta.seed);
    std::map<std::string, const json*> by_name;
    for (const auto& p : j.at("params")) by_name[p.at("name").get<std::string>()] = &p;
    auto params = model->parameters();
    if (by_name.size() != params.size()) throw ValidationError("checkpoint: parameter count mismatch");
    for (auto* p : params) {
      auto it = by_name.find(p->name);
      if (it == by_name.end()) throw ValidationError("checkpoint: missing parameter " + p->name);
      const json& pj = *it->second;
      const auto shape = pj.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != p->shape.rows || shape[1] != p->shape.cols) {
        throw ValidationError("checkpoint: shape mismatch for " + p->name);
      }
      auto values = pj.at("values").get<std::vector<double>>();
      if (values.size() != p->size()) throw ValidationError("checkpoint: value count mismatch for " + p->name);
      p->value = std::move(values);
    }
    if (meta_out) *meta_out = std::move(meta);
    return model;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: ") + e.what());
  }
}

inline std::unique_ptr<SrModel> read_checkpoint(const fs::path& path, CheckpointMeta* meta_out = nullptr) {
  try {
    return checkpoint_from_json(json::parse(read_file(path)), meta_out);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

} // namespace stpgsr::io
