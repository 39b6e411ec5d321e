// faceleak command line: orchestrates the toy pipelines end to end.
// Subcommands communicate only through artifacts on disk, so each one can be
// rerun in isolation and reruns with the same config+seed are byte-identical.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "faceleak/adapters.hpp"
#include "faceleak/data_ingest.hpp"
#include "faceleak/inversion.hpp"
#include "faceleak/metrics.hpp"
#include "faceleak/probes.hpp"

#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace faceleak;
using cli::RunConfig;

namespace {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
// written into preallocated slots so the schedule cannot affect output.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  int k = std::min<int>(workers, int(n));
  for (int t = 0; t < k; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

fs::path embedder_weights_path(const RunConfig& c) {
  fs::path w = c.embedder.weights;
  return w.is_absolute() ? w : c.out_root() / w;
}

std::unique_ptr<ToyEmbedder> load_embedder(const RunConfig& c) {
  fs::path w = embedder_weights_path(c);
  std::ifstream is(w, std::ios::binary);
  if (!is) throw DependencyError("embedder weights not found: " + w.string() +
                                 " (run train-probe or train-init first)");
  auto e = std::make_unique<ToyEmbedder>(c.embedder.pretrain.net, c.embedder.pretrain.seed);
  e->load(is);
  return e;
}

// Training commands self-provision the embedder; evaluation commands require it.
std::unique_ptr<ToyEmbedder> load_or_train_embedder(const RunConfig& c) {
  fs::path w = embedder_weights_path(c);
  if (fs::exists(w)) return load_embedder(c);
  const auto& pt = c.embedder.pretrain;
  std::cerr << "pretraining toy embedder (" << pt.identities << " identities x "
            << pt.renders << " renders)...\n";
  ToyDatasetConfig dc;
  dc.n_identities = pt.identities;
  dc.renders_per_identity = pt.renders;
  auto samples = gen_toy_samples(dc, pt.seed);
  std::vector<ImageTensor> imgs;
  std::vector<int> ids;
  for (auto& s : samples) {
    imgs.push_back(std::move(s.image));
    ids.push_back(s.identity_id);
  }
  auto e = train_toy_embedder(imgs, ids, pt.net, pt.seed);
  fs::create_directories(w.parent_path());
  std::ofstream os(w, std::ios::binary);
  e->save(os);
  return e;
}

DatasetManifest load_dataset(const RunConfig& c, fs::path* base_dir) {
  if (!c.dataset.manifest)
    throw ConfigError("this command requires dataset.manifest in the config");
  fs::path p = c.resolve_input(*c.dataset.manifest);
  if (!fs::exists(p)) {
    // manifests produced by gen-toy-data live under the output root
    fs::path alt = c.out_root() / *c.dataset.manifest;
    if (fs::exists(alt)) p = alt;
  }
  if (!fs::exists(p)) throw DependencyError("dataset manifest not found: " + p.string());
  *base_dir = p.parent_path();
  DatasetManifest m = load_manifest(p);
  if (m.split_records("train").empty() || m.split_records("test").empty())
    build_split(m, c.dataset.test_count, c.dataset.split_seed);
  return m;
}

Eigen::MatrixXd descriptors_for(const Embedder& e, const std::vector<ImageTensor>& imgs,
                                int workers) {
  Eigen::MatrixXd out(e.dim_out(), Eigen::Index(imgs.size()));
  parallel_for(imgs.size(), workers,
               [&](std::size_t i) { out.col(Eigen::Index(i)) = e.embed(imgs[i]).values; });
  return out;
}

struct SplitData {
  std::vector<ImageTensor> images;
  std::vector<const DatasetRecord*> records;
};

SplitData load_split(const DatasetManifest& m, const fs::path& base, const std::string& tag) {
  SplitData s;
  s.records = m.split_records(tag);
  s.images.reserve(s.records.size());
  for (const DatasetRecord* r : s.records) s.images.push_back(read_png(base / r->image_path));
  return s;
}

// Target matrix for a probe kind, one column per record.
nn::Mat probe_targets(ProbeKind kind, const SplitData& s, const std::string& attr,
                      const HistogramSpec& hist) {
  nn::Mat t;
  switch (kind) {
    case ProbeKind::Binary: {
      t.resize(1, Eigen::Index(s.records.size()));
      for (std::size_t i = 0; i < s.records.size(); ++i) {
        auto it = s.records[i]->attributes.find(attr);
        if (it == s.records[i]->attributes.end())
          throw DependencyError("attribute '" + attr + "' missing from manifest record");
        t(0, Eigen::Index(i)) = it->second ? 1.0 : 0.0;
      }
      break;
    }
    case ProbeKind::LandmarksFromId:
    case ProbeKind::LandmarksFromImage: {
      t.resize(136, Eigen::Index(s.records.size()));
      for (std::size_t i = 0; i < s.records.size(); ++i) {
        if (!s.records[i]->landmarks)
          throw DependencyError("record is missing landmarks; run a landmark pass first");
        t.col(Eigen::Index(i)) = *s.records[i]->landmarks;
      }
      break;
    }
    case ProbeKind::HistogramFromId: {
      t.resize(30, Eigen::Index(s.records.size()));
      for (std::size_t i = 0; i < s.records.size(); ++i)
        t.col(Eigen::Index(i)) = image_histogram_target(s.images[i], hist);
      break;
    }
  }
  return t;
}

ProbeSpec build_probe_spec(const RunConfig& c, ProbeKind kind, int desc_dim) {
  ProbeSpec spec = ProbeSpec::defaults(kind, kind == ProbeKind::LandmarksFromImage ? 0 : desc_dim);
  auto it = c.probes.find(probe_kind_name(kind));
  if (it != c.probes.end()) spec = it->second.apply(spec);
  return spec;
}

// ---- subcommands -----------------------------------------------------------

int cmd_gen_toy_data(const RunConfig& c) {
  if (!c.dataset.toy) throw ConfigError("gen-toy-data requires the dataset.toy section");
  fs::path dir = c.out_root() / "dataset";
  DatasetManifest m = gen_toy_dataset(*c.dataset.toy, c.seed, dir);
  build_split(m, c.dataset.test_count, c.dataset.split_seed);
  save_manifest(m, dir / "manifest.json");
  c.echo_into(dir);
  std::cout << "wrote " << m.records.size() << " records to " << dir.string()
            << " (fingerprint " << m.fingerprint() << ")\n";
  return 0;
}

int cmd_train_probe(const RunConfig& c, const std::string& kind_name, const std::string& attr,
                    int workers) {
  ProbeKind kind = probe_kind_from_name(kind_name);
  fs::path base;
  DatasetManifest m = load_dataset(c, &base);
  auto emb = load_or_train_embedder(c);
  SplitData train = load_split(m, base, "train");
  if (train.records.empty()) throw InputError("dataset has no training records");

  ProbeSpec spec = build_probe_spec(c, kind, emb->dim_out());
  nn::Mat x;
  if (kind == ProbeKind::LandmarksFromImage) {
    std::size_t n = train.images.size();
    auto it = c.probes.find(kind_name);
    if (it != c.probes.end() && it->second.max_train_images)
      n = std::min<std::size_t>(n, std::size_t(*it->second.max_train_images));
    x.resize(spec.input_dim, Eigen::Index(n));
    for (std::size_t i = 0; i < n; ++i) x.col(Eigen::Index(i)) = train.images[i].to_unit().data;
    train.images.resize(n);
    train.records.resize(n);
  } else {
    x = descriptors_for(*emb, train.images, workers);
  }
  nn::Mat t = probe_targets(kind, train, attr, spec.hist);

  ProbeModel probe = train_probe(spec, x, t, c.seed, m.fingerprint() + ":train");
  fs::path dir = c.out_root() / "probes" / kind_name;
  save_probe(probe, dir);
  c.echo_into(dir);
  std::cout << "trained " << kind_name << " probe on " << x.cols() << " samples, final loss "
            << format_double(probe.training_log.empty() ? 0.0 : probe.training_log.back())
            << "\n";
  return 0;
}

int cmd_eval_probe(const RunConfig& c, const std::string& kind_name, const std::string& attr,
                   int workers) {
  ProbeKind kind = probe_kind_from_name(kind_name);
  fs::path dir = c.out_root() / "probes" / kind_name;
  ProbeModel probe = load_probe(dir);
  auto emb = load_embedder(c);
  fs::path base;
  DatasetManifest m = load_dataset(c, &base);
  SplitData train = load_split(m, base, "train");
  SplitData test = load_split(m, base, "test");
  if (test.records.empty()) throw InputError("dataset has no test records");

  nn::Mat x;
  if (kind == ProbeKind::LandmarksFromImage) {
    x.resize(probe.spec.input_dim, Eigen::Index(test.images.size()));
    for (std::size_t i = 0; i < test.images.size(); ++i)
      x.col(Eigen::Index(i)) = test.images[i].to_unit().data;
  } else {
    x = descriptors_for(*emb, test.images, workers);
  }
  nn::Mat t = probe_targets(kind, test, attr, probe.spec.hist);
  nn::Mat train_t = probe_targets(kind, train, attr, probe.spec.hist);
  BaselineStats baseline = fit_baseline(kind, train_t);
  ProbeMetrics metrics =
      evaluate_probe(probe, x, t, m.fingerprint() + ":test", baseline, c.seed);

  std::ofstream(dir / "metrics.json") << metrics.to_json().dump(2) << "\n";
  const char* measure = kind == ProbeKind::Binary ? "accuracy %"
                        : kind == ProbeKind::HistogramFromId ? "mean EMD"
                                                             : "landmark err %";
  std::cout << kind_name << ": " << format_double(metrics.value) << " (" << measure
            << "), baseline " << format_double(metrics.baseline) << ", n="
            << metrics.n_test << "\n";
  return 0;
}

int cmd_train_init(const RunConfig& c) {
  auto emb = load_or_train_embedder(c);
  ToyGenerator gen;
  InitRegressor r = train_init_regressor(gen, *emb, c.init.n_samples, c.init.cfg, c.seed);
  fs::path dir = c.out_root() / "init_regressor";
  r.save(dir);
  c.echo_into(dir);
  std::cout << "trained init regressor on " << c.init.n_samples << " samples, final loss "
            << format_double(r.training_log.empty() ? 0.0 : r.training_log.back()) << "\n";
  return 0;
}

struct InvertTarget {
  std::string name;
  Eigen::VectorXd descriptor;
  std::optional<ImageTensor> image;  // ground truth kept only for reporting
};

Eigen::VectorXd read_descriptor_file(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw DependencyError("descriptor file not found: " + p.string());
  nlohmann::json j = nlohmann::json::parse(is);
  auto v = j.at("descriptor").get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

int cmd_invert(const RunConfig& c, std::vector<std::string> inputs, int workers) {
  auto emb = load_embedder(c);
  ToyGenerator gen;
  InitRegressor init = InitRegressor::load(c.out_root() / "init_regressor");

  const InversionConfig& base_cfg = c.inversion.cfg;
  bool need_lm = c.inversion.ablation || (base_cfg.use_landmarks && base_cfg.w2 > 0);
  bool need_hist = c.inversion.ablation || (base_cfg.use_histogram && base_cfg.w3 > 0);
  std::optional<ProbeModel> id_lm, img_lm, id_hist;
  if (need_lm) {
    id_lm = load_probe(c.out_root() / "probes" / "landmarks_from_id");
    img_lm = load_probe(c.out_root() / "probes" / "landmarks_from_image");
  }
  if (need_hist) id_hist = load_probe(c.out_root() / "probes" / "histogram_from_id");
  InversionProblem problem(gen, *emb, id_lm ? &*id_lm : nullptr,
                           img_lm ? &*img_lm : nullptr, id_hist ? &*id_hist : nullptr);

  if (inputs.empty()) inputs = c.inversion.targets;
  std::vector<InvertTarget> targets;
  for (const std::string& in : inputs) {
    fs::path p = c.resolve_input(in);
    InvertTarget t;
    t.name = p.stem().string();
    if (p.extension() == ".json") {
      t.descriptor = read_descriptor_file(p);
    } else {
      // the image is embedded once; only the descriptor reaches the optimizer
      t.image = read_png(p);
      t.descriptor = emb->embed(*t.image).values;
    }
    targets.push_back(std::move(t));
  }
  for (int i = 0; i < c.inversion.n_toy_targets; ++i) {
    InvertTarget t;
    char buf[32];
    std::snprintf(buf, sizeof buf, "toy%04d", i);
    t.name = buf;
    Eigen::VectorXd z = sample_latent(gen, c.seed + std::uint64_t(i));
    t.image = gen.generate(z);
    t.descriptor = emb->embed(*t.image).values;
    targets.push_back(std::move(t));
  }
  if (targets.empty())
    throw ConfigError("invert: no targets (pass --in, or set inversion.targets / n_toy_targets)");

  struct Variant {
    const char* name;
    bool lm, hist;
  };
  std::vector<Variant> variants;
  if (c.inversion.ablation)
    variants = {{"id", false, false}, {"id_lm", true, false}, {"id_lm_hist", true, true}};
  else
    variants = {{"result", base_cfg.use_landmarks && base_cfg.w2 > 0,
                 base_cfg.use_histogram && base_cfg.w3 > 0}};

  struct Job {
    std::size_t target;
    Variant variant;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < targets.size(); ++i)
    for (const Variant& v : variants) jobs.push_back({i, v});

  fs::path inv_root = c.out_root() / "inversions";
  for (const InvertTarget& t : targets) {
    fs::path dir = inv_root / t.name;
    fs::create_directories(dir);
    nlohmann::ordered_json j;
    j["descriptor"] = std::vector<double>(t.descriptor.data(),
                                          t.descriptor.data() + t.descriptor.size());
    std::ofstream(dir / "descriptor.json") << j.dump(2) << "\n";
    if (t.image) write_png(*t.image, dir / "target.png");
  }

  parallel_for(jobs.size(), workers, [&](std::size_t k) {
    const Job& job = jobs[k];
    const InvertTarget& t = targets[job.target];
    InversionConfig cfg = base_cfg;
    cfg.use_landmarks = job.variant.lm;
    cfg.use_histogram = job.variant.hist;
    if (!job.variant.lm) cfg.w2 = 0;
    if (!job.variant.hist) cfg.w3 = 0;
    cfg.seed = c.seed;
    InversionResult r = problem.invert(t.descriptor, cfg, init);
    save_inversion_result(r, inv_root / t.name / job.variant.name);
  });
  c.echo_into(inv_root);
  std::cout << "inverted " << targets.size() << " descriptor(s), " << variants.size()
            << " loss configuration(s) each, under " << inv_root.string() << "\n";
  return 0;
}

int cmd_report(const RunConfig& c) {
  auto emb = load_embedder(c);
  fs::path inv_root = c.out_root() / "inversions";
  if (!fs::exists(inv_root)) throw DependencyError("no inversion results under " + inv_root.string());

  std::vector<fs::path> target_dirs;
  for (const auto& e : fs::directory_iterator(inv_root))
    if (e.is_directory()) target_dirs.push_back(e.path());
  std::sort(target_dirs.begin(), target_dirs.end());

  const std::vector<std::string> variant_order = {"id", "id_lm", "id_lm_hist", "result"};
  std::map<std::string, std::vector<MetricsRecord>> pixel_metrics;
  std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> sim_pairs;

  for (const fs::path& dir : target_dirs) {
    if (!fs::exists(dir / "descriptor.json")) continue;
    Eigen::VectorXd d = read_descriptor_file(dir / "descriptor.json");
    std::optional<ImageTensor> target;
    if (fs::exists(dir / "target.png")) target = read_png(dir / "target.png");

    std::string best_variant;
    for (const std::string& v : variant_order) {
      fs::path res = dir / v / "result.png";
      if (!fs::exists(res)) continue;
      best_variant = v;
      if (target) pixel_metrics[v].push_back(image_metrics(read_png(res), *target));
    }
    if (!best_variant.empty()) {
      ImageTensor recon = read_png(dir / best_variant / "result.png");
      sim_pairs.emplace_back(emb->embed(recon).values, d);
    }
  }
  if (sim_pairs.empty()) throw DependencyError("no completed inversion results to report");

  fs::path out = c.out_root() / "report";
  fs::create_directories(out);

  if (!pixel_metrics.empty()) {
    // reconstruction quality per loss configuration, mean over targets
    std::vector<std::string> cols;
    for (const std::string& v : variant_order)
      if (pixel_metrics.count(v)) cols.push_back(v);
    std::ofstream csv(out / "reconstruction.csv");
    csv << "metric";
    for (const auto& v : cols) csv << "," << v;
    csv << "\n";
    auto row = [&](const char* name, auto pick) {
      csv << name;
      for (const auto& v : cols) {
        double sum = 0;
        for (const MetricsRecord& im : pixel_metrics[v]) sum += pick(im);
        csv << "," << format_double(sum / double(pixel_metrics[v].size()));
      }
      csv << "\n";
    };
    row("mse", [](const MetricsRecord& im) { return im.mse; });
    row("psnr", [](const MetricsRecord& im) { return im.psnr; });
    row("ssim", [](const MetricsRecord& im) { return im.ssim; });
  }

  SimilaritySummary sim = similarity_report(sim_pairs);
  write_similarity_csv(sim, out / "similarity.csv");
  write_similarity_plot(sim, out / "similarity.png");
  c.echo_into(out);
  std::cout << "report over " << sim_pairs.size() << " inversions: mean similarity "
            << format_double(sim.mean) << ", median " << format_double(sim.median) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"identity-descriptor leakage probes and descriptor inversion (toy stack)"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  std::optional<std::uint64_t> seed_override;
  int workers = 1;
  std::string kind = "binary";
  std::string attr = "smiling";
  std::vector<std::string> inputs;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "path to run config JSON")->required();
    sub->add_option("--out", out_override, "override output_dir from the config");
    sub->add_option("--seed", seed_override, "override seed from the config");
    sub->add_option("--workers", workers, "worker threads for independent items");
    return sub;
  };

  auto* sc_gen = add_common(app.add_subcommand("gen-toy-data", "render a toy dataset + manifest"));
  auto* sc_train = add_common(app.add_subcommand("train-probe", "train a leakage probe"));
  sc_train->add_option("--kind", kind, "binary | landmarks_from_id | histogram_from_id | landmarks_from_image");
  sc_train->add_option("--attr", attr, "attribute name for binary probes");
  auto* sc_eval = add_common(app.add_subcommand("eval-probe", "evaluate a trained probe"));
  sc_eval->add_option("--kind", kind, "probe kind to evaluate");
  sc_eval->add_option("--attr", attr, "attribute name for binary probes");
  auto* sc_init = add_common(app.add_subcommand("train-init", "train the descriptor-to-latent init regressor"));
  auto* sc_inv = add_common(app.add_subcommand("invert", "reconstruct images from descriptors"));
  sc_inv->add_option("--in", inputs, "target image (.png) or descriptor file (.json); repeatable");
  auto* sc_rep = add_common(app.add_subcommand("report", "aggregate inversion results into tables/plots"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    RunConfig c = cli::load_run_config(config_path);
    if (!out_override.empty()) c.output_dir = out_override;
    if (seed_override) c.seed = *seed_override;
    if (workers < 1) throw UsageError("--workers must be at least 1");

    if (sc_gen->parsed()) return cmd_gen_toy_data(c);
    if (sc_train->parsed()) return cmd_train_probe(c, kind, attr, workers);
    if (sc_eval->parsed()) return cmd_eval_probe(c, kind, attr, workers);
    if (sc_init->parsed()) return cmd_train_init(c);
    if (sc_inv->parsed()) return cmd_invert(c, inputs, workers);
    if (sc_rep->parsed()) return cmd_report(c);
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DependencyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
