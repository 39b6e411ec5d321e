#pragma once

// Run configuration shared by every subcommand. JSON, strict: unknown keys
// are rejected so typos fail loudly instead of silently using defaults.
// Relative paths are resolved against the config file's directory; the
// output directory additionally honors FACELEAK_OUTPUT_ROOT.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "faceleak/common.hpp"
#include "faceleak/adapters.hpp"
#include "faceleak/data_ingest.hpp"
#include "faceleak/inversion.hpp"
#include "faceleak/probes.hpp"

namespace faceleak::cli {

namespace fs = std::filesystem;

inline void check_keys(const nlohmann::json& j, const std::string& section,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) { ok = true; break; }
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in config section '" + section + "'");
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

struct EmbedderPretrain {
  int identities = 60;
  int renders = 20;
  std::uint64_t seed = 99;
  ToyEmbedderConfig net;  // desc_dim / hidden / pool / epochs / lr / batch
};

struct EmbedderSection {
  std::string weights = "embedder/weights.bin";  // relative to output root
  EmbedderPretrain pretrain;
};

struct DatasetSection {
  std::optional<std::string> manifest;
  std::optional<ToyDatasetConfig> toy;
  std::size_t test_count = 100;
  std::uint64_t split_seed = 7;
};

struct ProbeOverrides {
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<std::string> optimizer;
  std::optional<int> batch;
  std::optional<int> max_train_images;  // image CNN only

  ProbeSpec apply(ProbeSpec s) const {
    if (epochs) s.epochs = *epochs;
    if (lr) s.lr = *lr;
    if (optimizer) s.optimizer = *optimizer;
    if (batch) s.batch = *batch;
    return s;
  }
};

struct InitSection {
  InitRegressorConfig cfg;
  int n_samples = 1000;
};

struct InversionSection {
  InversionConfig cfg;
  bool ablation = false;
  std::vector<std::string> targets;
  int n_toy_targets = 0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  fs::path output_dir;
  EmbedderSection embedder;
  DatasetSection dataset;
  std::map<std::string, ProbeOverrides> probes;  // keyed by probe kind name
  InitSection init;
  InversionSection inversion;

  fs::path config_dir;   // directory the config file lives in
  std::string raw_text;  // echoed verbatim into output directories

  // Relative input paths are taken relative to the config file.
  fs::path resolve_input(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : config_dir / path;
  }

  fs::path out_root() const {
    if (output_dir.is_absolute()) return output_dir;
    if (const char* root = std::getenv("FACELEAK_OUTPUT_ROOT"))
      return fs::path(root) / output_dir;
    return config_dir / output_dir;
  }

  void echo_into(const fs::path& dir) const {
    fs::create_directories(dir);
    std::ofstream(dir / "config_echo.json") << raw_text;
  }
};

inline ProbeOverrides parse_probe_overrides(const nlohmann::json& j, const std::string& name) {
  check_keys(j, "probes." + name, {"epochs", "lr", "optimizer", "batch", "max_train_images"});
  ProbeOverrides o;
  if (j.contains("epochs")) o.epochs = j.at("epochs").get<int>();
  if (j.contains("lr")) o.lr = j.at("lr").get<double>();
  if (j.contains("optimizer")) o.optimizer = j.at("optimizer").get<std::string>();
  if (j.contains("batch")) o.batch = j.at("batch").get<int>();
  if (j.contains("max_train_images")) o.max_train_images = j.at("max_train_images").get<int>();
  return o;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config file: " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  check_keys(j, "(root)", {"seed", "output_dir", "embedder", "dataset", "probes",
                           "init_regressor", "inversion"});

  RunConfig c;
  c.raw_text = buf.str();
  c.config_dir = fs::absolute(path).parent_path();
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  if (!j.contains("output_dir")) throw ConfigError("config requires 'output_dir'");
  c.output_dir = j.at("output_dir").get<std::string>();

  if (j.contains("embedder")) {
    const auto& e = j.at("embedder");
    check_keys(e, "embedder", {"weights", "pretrain"});
    c.embedder.weights = get_or<std::string>(e, "weights", c.embedder.weights);
    if (e.contains("pretrain")) {
      const auto& p = e.at("pretrain");
      check_keys(p, "embedder.pretrain",
                 {"identities", "renders", "seed", "desc_dim", "hidden", "pool",
                  "epochs", "lr", "batch"});
      auto& pt = c.embedder.pretrain;
      pt.identities = get_or<int>(p, "identities", pt.identities);
      pt.renders = get_or<int>(p, "renders", pt.renders);
      pt.seed = get_or<std::uint64_t>(p, "seed", pt.seed);
      pt.net.desc_dim = get_or<int>(p, "desc_dim", pt.net.desc_dim);
      pt.net.hidden = get_or<int>(p, "hidden", pt.net.hidden);
      pt.net.pool = get_or<int>(p, "pool", pt.net.pool);
      pt.net.epochs = get_or<int>(p, "epochs", pt.net.epochs);
      pt.net.lr = get_or<double>(p, "lr", pt.net.lr);
      pt.net.batch = get_or<int>(p, "batch", pt.net.batch);
    }
  }

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d, "dataset", {"manifest", "toy", "test_count", "split_seed"});
    if (d.contains("manifest")) c.dataset.manifest = d.at("manifest").get<std::string>();
    if (d.contains("toy")) {
      const auto& t = d.at("toy");
      check_keys(t, "dataset.toy",
                 {"identities", "renders_per_identity", "smile_prior", "hat_prior",
                  "leaky_smile"});
      ToyDatasetConfig tc;
      tc.n_identities = get_or<int>(t, "identities", tc.n_identities);
      tc.renders_per_identity = get_or<int>(t, "renders_per_identity", tc.renders_per_identity);
      tc.smile_prior = get_or<double>(t, "smile_prior", tc.smile_prior);
      tc.hat_prior = get_or<double>(t, "hat_prior", tc.hat_prior);
      tc.leaky_smile = get_or<bool>(t, "leaky_smile", tc.leaky_smile);
      c.dataset.toy = tc;
    }
    c.dataset.test_count = get_or<std::size_t>(d, "test_count", c.dataset.test_count);
    c.dataset.split_seed = get_or<std::uint64_t>(d, "split_seed", c.dataset.split_seed);
  }

  if (j.contains("probes")) {
    const auto& p = j.at("probes");
    check_keys(p, "probes", {"binary", "landmarks_from_id", "histogram_from_id",
                             "landmarks_from_image"});
    for (auto it = p.begin(); it != p.end(); ++it)
      c.probes[it.key()] = parse_probe_overrides(it.value(), it.key());
  }

  if (j.contains("init_regressor")) {
    const auto& r = j.at("init_regressor");
    check_keys(r, "init_regressor", {"hidden_width", "epochs", "lr", "batch", "n_samples"});
    c.init.cfg.hidden_width = get_or<int>(r, "hidden_width", c.init.cfg.hidden_width);
    c.init.cfg.epochs = get_or<int>(r, "epochs", c.init.cfg.epochs);
    c.init.cfg.lr = get_or<double>(r, "lr", c.init.cfg.lr);
    c.init.cfg.batch = get_or<int>(r, "batch", c.init.cfg.batch);
    c.init.n_samples = get_or<int>(r, "n_samples", c.init.n_samples);
  }

  if (j.contains("inversion")) {
    const auto& v = j.at("inversion");
    check_keys(v, "inversion",
               {"w1", "w2", "w3", "lr", "steps", "use_landmarks", "use_histogram",
                "early_stop_window", "early_stop_rel", "ablation", "targets",
                "n_toy_targets"});
    auto& ic = c.inversion.cfg;
    ic.w1 = get_or<double>(v, "w1", ic.w1);
    ic.w2 = get_or<double>(v, "w2", ic.w2);
    ic.w3 = get_or<double>(v, "w3", ic.w3);
    ic.lr = get_or<double>(v, "lr", ic.lr);
    ic.steps = get_or<int>(v, "steps", ic.steps);
    ic.use_landmarks = get_or<bool>(v, "use_landmarks", ic.use_landmarks);
    ic.use_histogram = get_or<bool>(v, "use_histogram", ic.use_histogram);
    ic.early_stop_window = get_or<int>(v, "early_stop_window", ic.early_stop_window);
    ic.early_stop_rel = get_or<double>(v, "early_stop_rel", ic.early_stop_rel);
    ic.validate();
    c.inversion.ablation = get_or<bool>(v, "ablation", false);
    if (v.contains("targets"))
      c.inversion.targets = v.at("targets").get<std::vector<std::string>>();
    c.inversion.n_toy_targets = get_or<int>(v, "n_toy_targets", 0);
  }

  return c;
}

}  // namespace faceleak::cli
