#pragma once

// Dataset loading and generation: CelebA-style attribute annotations,
// manifest persistence with content fingerprinting, deterministic splits,
// pseudo-ground-truth landmarks, and the toy dataset generator.

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "faceleak/adapters.hpp"
#include "faceleak/common.hpp"
#include "faceleak/image.hpp"
#include "faceleak/landmarks.hpp"
#include "faceleak/toy_face.hpp"

namespace faceleak {

namespace fs = std::filesystem;

struct DatasetRecord {
  std::string image_path;  // relative to the manifest file
  int identity_id = -1;    // -1 when unknown
  std::map<std::string, bool> attributes;
  std::optional<Eigen::VectorXd> landmarks;  // 136-vector
  bool landmark_failed = false;
  std::string split;  // "", "train" or "test"
};

struct DatasetManifest {
  std::vector<DatasetRecord> records;
  std::string provenance;

  // Content hash over the records only; provenance text does not count.
  std::string fingerprint() const {
    Fnv1a h;
    for (const auto& r : records) {
      h.update(r.image_path);
      h.update_u64(std::uint64_t(std::int64_t(r.identity_id)));
      for (const auto& [k, v] : r.attributes) {
        h.update(k);
        h.update_u64(v ? 1 : 0);
      }
      if (r.landmarks) {
        for (Eigen::Index i = 0; i < r.landmarks->size(); ++i) {
          double d = (*r.landmarks)[i];
          h.update(&d, sizeof d);
        }
      }
      h.update_u64(r.landmark_failed ? 1 : 0);
      h.update(r.split);
    }
    return h.hex();
  }

  std::vector<const DatasetRecord*> split_records(const std::string& tag) const {
    std::vector<const DatasetRecord*> out;
    for (const auto& r : records)
      if (r.split == tag) out.push_back(&r);
    return out;
  }
};

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["provenance"] = m.provenance;
  j["records"] = nlohmann::json::array();
  for (const auto& r : m.records) {
    nlohmann::ordered_json rec;
    rec["image_path"] = r.image_path;
    rec["identity_id"] = r.identity_id;
    rec["attributes"] = r.attributes;
    if (r.landmarks) {
      std::vector<double> lm(r.landmarks->data(),
                             r.landmarks->data() + r.landmarks->size());
      rec["landmarks"] = lm;
    }
    rec["landmark_failed"] = r.landmark_failed;
    rec["split"] = r.split;
    j["records"].push_back(rec);
  }
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.provenance = j.value("provenance", "");
  for (const auto& rec : j.at("records")) {
    DatasetRecord r;
    r.image_path = rec.at("image_path").get<std::string>();
    r.identity_id = rec.value("identity_id", -1);
    if (rec.contains("attributes"))
      r.attributes = rec.at("attributes").get<std::map<std::string, bool>>();
    if (rec.contains("landmarks")) {
      auto lm = rec.at("landmarks").get<std::vector<double>>();
      if (lm.size() != LandmarkSet::kCount * 2)
        throw ParseError("manifest landmarks must have 136 values");
      r.landmarks = Eigen::Map<Eigen::VectorXd>(lm.data(), Eigen::Index(lm.size()));
    }
    r.landmark_failed = rec.value("landmark_failed", false);
    r.split = rec.value("split", "");
    m.records.push_back(std::move(r));
  }
  return m;
}

inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write manifest: " + path.string());
  os << manifest_to_json(m).dump(2) << "\n";
}

inline DatasetManifest load_manifest(const fs::path& path, bool check_paths = true) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read manifest: " + path.string());
  nlohmann::json j = nlohmann::json::parse(is);
  DatasetManifest m = manifest_from_json(j);
  if (check_paths) {
    fs::path base = path.parent_path();
    for (const auto& r : m.records)
      if (!fs::exists(base / r.image_path))
        throw InputError("manifest image missing: " + (base / r.image_path).string());
  }
  return m;
}

// ---------------------------------------------------------------------------
// CelebA attribute annotation format: a count line, a header line of
// attribute names, then one row per image of ±1 flags.
// ---------------------------------------------------------------------------

struct AttributeTable {
  std::vector<std::string> attribute_names;
  std::vector<std::pair<std::string, std::map<std::string, bool>>> rows;
};

inline AttributeTable parse_attribute_file(std::istream& is) {
  AttributeTable t;
  std::string line;
  if (!std::getline(is, line)) throw ParseError("attribute file: missing count line");
  long declared = 0;
  try {
    declared = std::stol(line);
  } catch (...) {
    throw ParseError("attribute file: malformed count line");
  }
  if (!std::getline(is, line)) throw ParseError("attribute file: missing header line");
  {
    std::istringstream hs(line);
    std::string name;
    while (hs >> name) t.attribute_names.push_back(name);
  }
  if (t.attribute_names.empty()) throw ParseError("attribute file: empty header");
  long line_no = 2;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream rs(line);
    std::string image;
    rs >> image;
    std::map<std::string, bool> attrs;
    for (const auto& name : t.attribute_names) {
      int v = 0;
      if (!(rs >> v) || (v != 1 && v != -1))
        throw ParseError("attribute file: malformed row at line " +
                         std::to_string(line_no));
      attrs[name] = (v == 1);
    }
    int extra;
    if (rs >> extra)
      throw ParseError("attribute file: extra values at line " + std::to_string(line_no));
    t.rows.emplace_back(image, std::move(attrs));
  }
  if (long(t.rows.size()) != declared)
    throw ParseError("attribute file: count line says " + std::to_string(declared) +
                     " but found " + std::to_string(t.rows.size()) + " rows");
  return t;
}

inline AttributeTable parse_attribute_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read attribute file: " + path.string());
  return parse_attribute_file(is);
}

inline void serialize_attribute_file(const AttributeTable& t, std::ostream& os) {
  os << t.rows.size() << "\n";
  for (std::size_t i = 0; i < t.attribute_names.size(); ++i)
    os << (i ? " " : "") << t.attribute_names[i];
  os << "\n";
  for (const auto& [image, attrs] : t.rows) {
    os << image;
    for (const auto& name : t.attribute_names)
      os << " " << (attrs.at(name) ? 1 : -1);
    os << "\n";
  }
}

// ---------------------------------------------------------------------------
// Splits and pseudo landmarks
// ---------------------------------------------------------------------------

inline void build_split(DatasetManifest& m, std::size_t test_count, std::uint64_t seed) {
  if (test_count >= m.records.size())
    throw ConfigError("test_count must be smaller than the record count");
  std::vector<std::size_t> order(m.records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  for (std::size_t i = 0; i < order.size(); ++i)
    m.records[order[i]].split = i < test_count ? "test" : "train";
}

// Pluggable detector seam; real runs wire an external 68-point detector
// here, toy datasets already carry exact renderer landmarks.
class LandmarkDetector {
 public:
  virtual ~LandmarkDetector() = default;
  virtual std::optional<LandmarkSet> detect(const ImageTensor& img) const = 0;
};

inline void generate_pseudo_landmarks(DatasetManifest& m, const fs::path& base_dir,
                                      const LandmarkDetector* detector) {
  for (auto& r : m.records) {
    if (r.landmarks) continue;  // toy records keep their exact landmarks
    if (!detector)
      throw DependencyError("no landmark detector configured and record '" +
                            r.image_path + "' has no landmarks");
    ImageTensor img = read_png(base_dir / r.image_path);
    auto lm = detector->detect(img);
    if (lm) {
      r.landmarks = lm->to_vector();
      r.landmark_failed = false;
    } else {
      r.landmark_failed = true;
    }
  }
}

// ---------------------------------------------------------------------------
// Toy dataset generation
// ---------------------------------------------------------------------------

struct ToyDatasetConfig {
  int n_identities = 50;
  int renders_per_identity = 10;
  double smile_prior = 0.5;  // marginal probability of the smiling label
  double hat_prior = 0.3;
  // When set, each identity gets a biased smile tendency, so identity and
  // expression are correlated and the descriptor provably leaks the label.
  bool leaky_smile = false;
};

struct ToySample {
  toy::ToyFaceParams params;
  ImageTensor image;
  LandmarkSet landmarks;
  bool smiling = false;
  bool wearing_hat = false;
  int identity_id = -1;
};

inline std::vector<ToySample> gen_toy_samples(const ToyDatasetConfig& cfg,
                                              std::uint64_t seed) {
  if (cfg.n_identities < 2) throw ConfigError("need at least 2 toy identities");
  if (cfg.renders_per_identity < 1) throw ConfigError("need at least 1 render per identity");
  Rng rng(seed);
  const auto& lo = toy::param_lo();
  const auto& hi = toy::param_hi();
  auto draw = [&](int i, double margin = 0.0) {
    double span = hi[std::size_t(i)] - lo[std::size_t(i)];
    return rng.uniform(lo[std::size_t(i)] + margin * span, hi[std::size_t(i)] - margin * span);
  };
  std::vector<ToySample> out;
  for (int id = 0; id < cfg.n_identities; ++id) {
    Eigen::VectorXd id_part(toy::kIdParams);
    for (int i = 0; i < toy::kIdParams; ++i) id_part[i] = draw(i, 0.02);
    double smile_p = cfg.smile_prior;
    // leaky construction: identity parity sets the smile tendency, so the
    // marginal stays balanced and the majority baseline is ~50%
    if (cfg.leaky_smile) smile_p = (id % 2 == 0) ? 0.98 : 0.02;
    for (int r = 0; r < cfg.renders_per_identity; ++r) {
      toy::ToyFaceParams p;
      p.id_part = id_part;
      auto& np = p.nonid_part;
      np[toy::kYaw - toy::kIdParams] = draw(toy::kYaw);
      // draw the label first, then a smile value clear of the threshold
      bool smiling = rng.uniform() < smile_p;
      np[toy::kSmile - toy::kIdParams] =
          smiling ? rng.uniform(toy::kSmileThreshold + 0.15, 1.0)
                  : rng.uniform(-1.0, toy::kSmileThreshold - 0.15);
      bool hat = rng.uniform() < cfg.hat_prior;
      np[toy::kHat - toy::kIdParams] =
          hat ? rng.uniform(toy::kHatThreshold + 0.2, 1.0)
              : rng.uniform(0.0, toy::kHatThreshold - 0.2);
      // moderate background variation; full-range bg swamps the pooled features
      np[toy::kBgR - toy::kIdParams] = rng.uniform(0.25, 0.75);
      np[toy::kBgG - toy::kIdParams] = rng.uniform(0.25, 0.75);
      np[toy::kBgB - toy::kIdParams] = rng.uniform(0.25, 0.75);
      np[toy::kBrightness - toy::kIdParams] = draw(toy::kBrightness);

      toy::ToyRender render = toy::render_toy_face(p);
      ToySample s;
      s.params = p;
      s.image = std::move(render.image);
      s.landmarks.points = render.landmarks;
      s.smiling = render.smiling;
      s.wearing_hat = render.wearing_hat;
      s.identity_id = id;
      out.push_back(std::move(s));
    }
  }
  return out;
}

// Renders a toy dataset to disk (PNG per record plus one manifest).
inline DatasetManifest gen_toy_dataset(const ToyDatasetConfig& cfg, std::uint64_t seed,
                                       const fs::path& out_dir) {
  std::vector<ToySample> samples = gen_toy_samples(cfg, seed);
  fs::create_directories(out_dir / "images");
  DatasetManifest m;
  std::ostringstream prov;
  prov << "toy dataset: " << cfg.n_identities << " identities x "
       << cfg.renders_per_identity << " renders, seed " << seed
       << (cfg.leaky_smile ? ", identity-correlated smile" : "");
  m.provenance = prov.str();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "images/%06zu.png", i);
    write_png(samples[i].image, out_dir / name);
    DatasetRecord r;
    r.image_path = name;
    r.identity_id = samples[i].identity_id;
    r.attributes["smiling"] = samples[i].smiling;
    r.attributes["wearing_hat"] = samples[i].wearing_hat;
    r.landmarks = samples[i].landmarks.to_vector();
    m.records.push_back(std::move(r));
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

inline std::vector<ImageTensor> load_images(const DatasetManifest& m,
                                            const fs::path& base_dir) {
  std::vector<ImageTensor> out;
  out.reserve(m.records.size());
  for (const auto& r : m.records) out.push_back(read_png(base_dir / r.image_path));
  return out;
}

}  // namespace faceleak
