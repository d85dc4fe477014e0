// stpgsr command-line entry point.

#include <openssl/evp.h>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stpgsr/stpgsr.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stpgsr;

namespace {

enum ExitCode : int { ok = 0, config_error = 2, io_error = 3, divergence = 4, gradcheck_failure = 5 };

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Everything a run needs, resolved from defaults, the config file and flags in that order.
struct RunConfig {
  io::SyntheticConfig synthetic;
  TrainConfig train;
  std::size_t jobs = 1;

  [[nodiscard]] json to_json() const {
    return {{"samples", synthetic.samples},
            {"n_s", synthetic.n_s},
            {"n_t", synthetic.n_t},
            {"noise", synthetic.noise},
            {"modules", synthetic.modules},
            {"seed", train.seed},
            {"data_seed", synthetic.seed},
            {"model", to_string(train.model_kind)},
            {"learning_rate", train.learning_rate},
            {"epochs", train.epochs},
            {"accumulation_batch", train.accumulation_batch},
            {"fold_count", train.fold_count},
            {"jobs", jobs}};
  }
};

RunConfig load_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path + ": expected a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "samples") rc.synthetic.samples = v.get<std::size_t>();
      else if (key == "n_s") rc.synthetic.n_s = v.get<std::size_t>();
      else if (key == "n_t") rc.synthetic.n_t = v.get<std::size_t>();
      else if (key == "noise") rc.synthetic.noise = v.get<double>();
      else if (key == "modules") rc.synthetic.modules = v.get<std::size_t>();
      else if (key == "seed") rc.train.seed = v.get<std::uint64_t>();
      else if (key == "data_seed") rc.synthetic.seed = v.get<std::uint64_t>();
      else if (key == "model") rc.train.model_kind = parse_model_kind(v.get<std::string>());
      else if (key == "learning_rate") rc.train.learning_rate = v.get<double>();
      else if (key == "epochs") rc.train.epochs = v.get<std::size_t>();
      else if (key == "accumulation_batch") rc.train.accumulation_batch = v.get<std::size_t>();
      else if (key == "fold_count") rc.train.fold_count = v.get<std::size_t>();
      else if (key == "jobs") rc.jobs = v.get<std::size_t>();
      else throw ConfigError(path + ": unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return rc;
}

/// Flag values that override the config file when given.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model;
  std::optional<double> learning_rate;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> accumulation_batch;
  std::optional<std::size_t> fold_count;
  std::optional<std::size_t> jobs;
  std::optional<std::size_t> samples;
  std::optional<std::size_t> n_s;
  std::optional<std::size_t> n_t;

  void apply(RunConfig& rc) const {
    if (seed) rc.train.seed = rc.synthetic.seed = *seed;
    if (model) rc.train.model_kind = parse_model_kind(*model);
    if (learning_rate) rc.train.learning_rate = *learning_rate;
    if (epochs) rc.train.epochs = *epochs;
    if (accumulation_batch) rc.train.accumulation_batch = *accumulation_batch;
    if (fold_count) rc.train.fold_count = *fold_count;
    if (jobs) rc.jobs = *jobs;
    if (samples) rc.synthetic.samples = *samples;
    if (n_s) rc.synthetic.n_s = *n_s;
    if (n_t) rc.synthetic.n_t = *n_t;
  }
};

/// Git blob id: SHA-1 over "blob <size>\0" followed by the bytes.
std::string git_blob_sha1(std::string_view bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 || EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha1 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

/// Records the resolved config and the content hashes of every input under `out`.
class Provenance {
public:
  void add_file(const std::string& label, const fs::path& path) { add_bytes(label, io::read_file(path)); }
  void add_bytes(const std::string& label, std::string_view bytes) { inputs_[label] = git_blob_sha1(bytes); }

  void write(const fs::path& out, const json& config) const {
    const std::string config_text = config.dump(2) + "\n";
    io::write_atomic(out / "config.json", config_text);
    json files = json::object();
    std::string listing = "config.json " + git_blob_sha1(config_text) + "\n";
    for (const auto& [label, sha] : inputs_) {
      files[label] = sha;
      listing += label + " " + sha + "\n";
    }
    const json doc = {{"inputs_sha1", git_blob_sha1(listing)}, {"config_sha1", git_blob_sha1(config_text)}, {"files", files}};
    io::write_atomic(out / "inputs.json", doc.dump(2) + "\n");
  }

private:
  std::map<std::string, std::string> inputs_;
};

void hash_dataset(Provenance& prov, const fs::path& manifest_path, const io::DatasetManifest& m) {
  prov.add_file("manifest", manifest_path);
  const fs::path base = manifest_path.parent_path();
  for (const auto& e : m.samples) {
    prov.add_file("sample/" + e.id + "/lr", fs::path(e.lr).is_absolute() ? fs::path(e.lr) : base / e.lr);
    prov.add_file("sample/" + e.id + "/hr", fs::path(e.hr).is_absolute() ? fs::path(e.hr) : base / e.hr);
  }
}

std::string format(double v) { return io::format_double(v); }

std::string format(const std::optional<double>& v) { return v ? io::format_double(*v) : std::string("null"); }

int cmd_gen_data(const RunConfig& rc, const fs::path& out) {
  try {
    rc.synthetic.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  const auto m = io::generate_synthetic(rc.synthetic, out);
  Provenance prov;
  prov.write(out, rc.to_json());
  std::cout << "generated " << m.samples.size() << " samples (" << rc.synthetic.n_s << " -> " << rc.synthetic.n_t
            << ") with seed " << rc.synthetic.seed << " in " << out.string() << "\n";
  return ok;
}

int cmd_train(const RunConfig& rc, const fs::path& manifest_path, const fs::path& out) {
  try {
    rc.train.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  io::DatasetManifest manifest;
  const auto data = io::load_dataset(manifest_path, &manifest);
  if (data.size() < rc.train.fold_count) {
    throw ConfigError("dataset has " + std::to_string(data.size()) + " samples, fewer than fold_count " +
                      std::to_string(rc.train.fold_count));
  }
  Provenance prov;
  hash_dataset(prov, manifest_path, manifest);
  const json config = rc.to_json();
  prov.write(out, config);

  const fs::path base = fs::absolute(manifest_path).parent_path();
  auto on_fold = [&](const FoldResult& fr) {
    const fs::path dir = out / ("fold_" + std::to_string(fr.fold));
    io::CheckpointMeta meta;
    meta.kind = rc.train.model_kind;
    meta.seed = model_seed(rc.train.seed);
    meta.eval_seed = eval_seed(rc.train.seed);
    meta.config = config;
    io::write_checkpoint(*fr.model, meta, dir / "checkpoint.json");
    io::write_atomic(dir / "history.csv", io::history_csv(fr.history));
    io::write_report(fr.report, dir / "report.json");
    io::write_atomic(dir / "report.csv", io::report_csv(fr.report));
    io::DatasetManifest test = manifest;
    test.samples.clear();
    for (auto i : fr.split.test) {
      auto e = manifest.samples[i];
      if (!fs::path(e.lr).is_absolute()) e.lr = (base / e.lr).lexically_normal().string();
      if (!fs::path(e.hr).is_absolute()) e.hr = (base / e.hr).lexically_normal().string();
      test.samples.push_back(std::move(e));
    }
    io::write_manifest(test, dir / "test_manifest.json");
    std::cout << "fold " << fr.fold << ": final loss " << format(fr.history.epoch_loss.back()) << ", edge MAE "
              << format(fr.report.aggregate.at("mae")) << "\n";
  };
  const auto cv = cross_validate(data, rc.train, rc.jobs, on_fold);

  json folds = json::array();
  std::string csv;
  for (const auto& fr : cv.folds) {
    folds.push_back(io::to_json(fr.report));
    const auto part = io::report_csv(fr.report);
    csv += csv.empty() ? part : part.substr(part.find('\n') + 1);
  }
  json aggregate = json::object();
  for (const auto& [name, v] : cv.aggregate) aggregate[name] = io::optional_number(v);
  const json report = {{"model", to_string(rc.train.model_kind)}, {"folds", folds}, {"aggregate", aggregate}};
  io::write_atomic(out / "report.json", report.dump(2) + "\n");
  io::write_atomic(out / "report.csv", csv);
  std::cout << "aggregate over " << cv.folds.size() << " folds:\n";
  for (const auto& name : topo::metric_names()) std::cout << "  " << name << " " << format(cv.aggregate.at(name)) << "\n";
  return ok;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& manifest_path, const fs::path& out, std::size_t jobs) {
  io::CheckpointMeta meta;
  auto model = io::read_checkpoint(checkpoint, &meta);
  io::DatasetManifest manifest = io::read_manifest(manifest_path);
  if (manifest.n_s != meta.n_s || manifest.n_t != meta.n_t) {
    throw ConfigError("checkpoint sizes " + std::to_string(meta.n_s) + " -> " + std::to_string(meta.n_t) +
                      " differ from dataset sizes " + std::to_string(manifest.n_s) + " -> " + std::to_string(manifest.n_t));
  }
  const auto data = io::load_dataset(manifest_path, &manifest);
  if (data.empty()) throw ConfigError("dataset has no samples");
  Provenance prov;
  prov.add_file("checkpoint", checkpoint);
  hash_dataset(prov, manifest_path, manifest);
  prov.write(out, {{"checkpoint", fs::absolute(checkpoint).string()},
                   {"data", fs::absolute(manifest_path).string()},
                   {"jobs", jobs},
                   {"eval_seed", meta.eval_seed},
                   {"training_config", meta.config}});
  std::vector<Connectome> preds;
  auto report = evaluate(*model, data, meta.eval_seed, jobs, &preds);
  for (std::size_t i = 0; i < data.size(); ++i) io::write_matrix(preds[i], out / "predictions" / (data[i].id + "_pred.csv"));
  io::write_report(report, out / "report.json");
  io::write_atomic(out / "report.csv", io::report_csv(report));
  std::cout << "evaluated " << data.size() << " samples with " << to_string(meta.kind) << ":\n";
  for (const auto& name : topo::metric_names()) std::cout << "  " << name << " " << format(report.aggregate.at(name)) << "\n";
  return ok;
}

int cmd_dual_info(std::size_t n) {
  if (n < 2) throw ConfigError("dual-info: n must be >= 2");
  const std::size_t m = n * (n - 1) / 2, degree = 2 * (n - 2), edges = m * degree / 2;
  const double density = m < 2 ? 0.0 : 2.0 * static_cast<double>(edges) / (static_cast<double>(m) * (static_cast<double>(m) - 1.0));
  const double bytes = static_cast<double>(m + edges) * sizeof(NodePair);
  std::printf("primal nodes      %zu\n", n);
  std::printf("dual nodes (m)    %zu\n", m);
  std::printf("regular degree    %zu\n", degree);
  std::printf("dual edges        %zu\n", edges);
  std::printf("density           %.4f%%\n", 100.0 * density);
  std::printf("sparsity          %.4f%%\n", 100.0 * (1.0 - density));
  std::printf("edge-list memory  %.1f MiB\n", bytes / (1024.0 * 1024.0));
  std::printf("dense m x m       %.1f MiB\n", static_cast<double>(m) * static_cast<double>(m) * sizeof(double) / (1024.0 * 1024.0));
  return ok;
}

int cmd_gradcheck(bool full) {
  auto cases = gradcheck::op_cases();
  if (full)
    for (auto& c : gradcheck::model_cases()) cases.push_back(std::move(c));
  const auto outcomes = gradcheck::run(cases);
  const gradcheck::Outcome* worst = nullptr;
  bool all = true;
  for (const auto& o : outcomes) {
    std::printf("%-6s %-28s max rel error %.3e  threshold %.0e\n", o.passed() ? "ok" : "FAIL", o.name.c_str(),
                o.result.max_rel_error, o.threshold);
    all = all && o.passed();
    if (!worst || o.result.max_rel_error / o.threshold > worst->result.max_rel_error / worst->threshold) worst = &o;
  }
  if (worst) std::printf("worst: %s (%.3e)\n", worst->name.c_str(), worst->result.max_rel_error);
  return all ? ok : gradcheck_failure;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph super-resolution of brain connectomes on the dual graph"};
  app.footer(
      "Exit codes:\n"
      "  0  success\n"
      "  2  configuration or input validation error\n"
      "  3  I/O error (missing or unwritable file)\n"
      "  4  training diverged (non-finite loss)\n"
      "  5  gradient check failed");
  app.require_subcommand(1);

  std::string config_path, out, data, checkpoint;
  Overrides ov;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file with flat keys");
    sub->add_option("--seed", ov.seed, "Seed for data generation, initialisation and splits");
  };
  auto add_training = [&](CLI::App* sub) {
    sub->add_option("--model", ov.model, "stp_gsr, direct_sr or autoencoder");
    sub->add_option("--lr", ov.learning_rate, "Adam learning rate");
    sub->add_option("--epochs", ov.epochs, "Training epochs per fold");
    sub->add_option("--accumulation", ov.accumulation_batch, "Samples per optimiser step");
    sub->add_option("--folds", ov.fold_count, "Cross-validation folds");
    sub->add_option("--jobs", ov.jobs, "Evaluation worker threads");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic paired LR/HR dataset");
  add_common(gen);
  gen->add_option("--samples", ov.samples, "Number of subjects");
  gen->add_option("--n-s", ov.n_s, "Source (LR) node count");
  gen->add_option("--n-t", ov.n_t, "Target (HR) node count");
  gen->add_option("--out", out, "Output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Cross-validate a model on a dataset");
  add_common(train_cmd);
  add_training(train_cmd);
  train_cmd->add_option("--data", data, "Dataset manifest")->required();
  train_cmd->add_option("--out", out, "Output directory")->required();

  std::size_t eval_jobs = 1;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required();
  eval_cmd->add_option("--data", data, "Dataset manifest")->required();
  eval_cmd->add_option("--out", out, "Output directory")->required();
  eval_cmd->add_option("--jobs", eval_jobs, "Evaluation worker threads");

  std::size_t n = 0;
  auto* dual = app.add_subcommand("dual-info", "Print dual-graph statistics for K_n");
  dual->add_option("--n", n, "Primal node count")->required();

  bool full = false;
  auto* grad = app.add_subcommand("gradcheck", "Run finite-difference gradient checks");
  grad->add_flag("--full", full, "Also check the full models end to end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : config_error;
  }

  try {
    if (*dual) return cmd_dual_info(n);
    if (*grad) return cmd_gradcheck(full);
    if (*eval_cmd) return cmd_eval(checkpoint, data, out, eval_jobs);
    RunConfig rc = load_config(config_path);
    ov.apply(rc);
    if (*gen) return cmd_gen_data(rc, out);
    return cmd_train(rc, data, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return config_error;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return io_error;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return divergence;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return config_error;
  } catch (const ShapeError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return config_error;
  } catch (const DomainError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return config_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
