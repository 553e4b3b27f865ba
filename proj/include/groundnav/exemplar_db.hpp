#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "groundnav/common.hpp"

namespace groundnav::db {

constexpr int kPatchSize = 32;   // exemplar patches are 32x32x3
constexpr int kPatchChannels = 3;
constexpr int kMaxExemplars = 16;

/// H x W x C float image, values in [0, 1], channel-interleaved row-major.
struct ImagePatch {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<float> data;

  float at(int x, int y, int ch) const {
    return data[(static_cast<size_t>(y) * w + x) * c + ch];
  }
  float& at(int x, int y, int ch) {
    return data[(static_cast<size_t>(y) * w + x) * c + ch];
  }
  size_t count() const { return static_cast<size_t>(h) * w * c; }
};

using Phrase = std::vector<std::string>;

struct ObjectEntry {
  std::string id;
  std::vector<ImagePatch> images;
  std::vector<Phrase> phrases;
};

struct ObjectDatabase {
  std::vector<ObjectEntry> entries;
  std::vector<double> prior;  // sums to 1, uniform by default

  int size() const { return static_cast<int>(entries.size()); }

  int index_of(const std::string& id) const {
    for (int i = 0; i < size(); ++i)
      if (entries[i].id == id) return i;
    return -1;
  }
};

namespace detail {

inline void validate_entry(const ObjectEntry& e, int expect_h, int expect_w, int expect_c) {
  if (e.images.empty() || e.images.size() > kMaxExemplars)
    throw std::runtime_error("database entry '" + e.id + "': image count must be in [1, 16]");
  if (e.phrases.empty() || e.phrases.size() > kMaxExemplars)
    throw std::runtime_error("database entry '" + e.id + "': phrase count must be in [1, 16]");
  for (const auto& img : e.images) {
    if (img.h != expect_h || img.w != expect_w || img.c != expect_c)
      throw std::runtime_error("database entry '" + e.id + "': image dimensions differ from the database's");
    if (img.data.size() != img.count())
      throw std::runtime_error("database entry '" + e.id + "': image data length does not match h*w*c");
    for (float v : img.data)
      if (!(v >= 0.0f && v <= 1.0f))
        throw std::runtime_error("database entry '" + e.id + "': pixel values must be in [0, 1]");
  }
  for (const auto& p : e.phrases)
    if (p.empty()) throw std::runtime_error("database entry '" + e.id + "': empty phrase");
}

}  // namespace detail

inline void validate(const ObjectDatabase& d) {
  if (d.entries.empty()) throw std::runtime_error("database: no entries");
  std::unordered_set<std::string> seen;
  for (const auto& e : d.entries) {
    if (!seen.insert(e.id).second)
      throw std::runtime_error("database: duplicate object id '" + e.id + "'");
  }
  const auto& first = d.entries.front().images.front();
  for (const auto& e : d.entries) detail::validate_entry(e, first.h, first.w, first.c);
  if (d.prior.size() != d.entries.size())
    throw std::runtime_error("database: prior length does not match entry count");
  double s = 0;
  for (double p : d.prior) {
    if (p < 0) throw std::runtime_error("database: negative prior");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) throw std::runtime_error("database: prior does not sum to 1");
}

inline std::vector<double> uniform_prior(size_t n) {
  return std::vector<double>(n, n ? 1.0 / static_cast<double>(n) : 0.0);
}

inline nlohmann::json to_json(const ObjectDatabase& d) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& e : d.entries) {
    nlohmann::json images = nlohmann::json::array();
    for (const auto& img : e.images)
      images.push_back({{"h", img.h}, {"w", img.w}, {"c", img.c}, {"data_b64", base64_of_floats(img.data)}});
    objects.push_back({{"id", e.id}, {"images", images}, {"phrases", e.phrases}});
  }
  return {{"objects", objects}, {"prior", d.prior}};
}

inline ObjectDatabase database_from_json(const nlohmann::json& j) {
  ObjectDatabase d;
  if (!j.contains("objects") || !j["objects"].is_array())
    throw std::runtime_error("database: missing 'objects' array");
  for (const auto& jo : j["objects"]) {
    ObjectEntry e;
    if (!jo.contains("id") || !jo["id"].is_string())
      throw std::runtime_error("database: object without a string 'id'");
    e.id = jo["id"].get<std::string>();
    if (!jo.contains("images")) throw std::runtime_error("database entry '" + e.id + "': missing 'images'");
    for (const auto& ji : jo["images"]) {
      ImagePatch img;
      try {
        img.h = ji.at("h").get<int>();
        img.w = ji.at("w").get<int>();
        img.c = ji.at("c").get<int>();
        img.data = floats_of_base64(ji.at("data_b64").get<std::string>());
      } catch (const nlohmann::json::exception& ex) {
        throw std::runtime_error("database entry '" + e.id + "': bad image field: " + ex.what());
      }
      // clamp into the valid patch range on load
      for (float& v : img.data) v = static_cast<float>(clampd(v, 0.0, 1.0));
      e.images.push_back(std::move(img));
    }
    if (!jo.contains("phrases")) throw std::runtime_error("database entry '" + e.id + "': missing 'phrases'");
    for (const auto& jp : jo["phrases"]) {
      Phrase p;
      for (const auto& t : jp) p.push_back(t.get<std::string>());
      e.phrases.push_back(std::move(p));
    }
    d.entries.push_back(std::move(e));
  }
  if (j.contains("prior") && !j["prior"].is_null())
    d.prior = j["prior"].get<std::vector<double>>();
  else
    d.prior = uniform_prior(d.entries.size());
  validate(d);
  return d;
}

inline ObjectDatabase load_database(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("database: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw std::runtime_error("database '" + path + "': JSON parse error: " + ex.what());
  }
  return database_from_json(j);
}

/// Canonical serialization: sorted keys (nlohmann objects are key-ordered maps)
/// and shortest round-trip float formatting, so save(load(p)) is reproducible.
inline void save_database(const ObjectDatabase& d, const std::string& path) {
  validate(d);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("database: cannot write '" + path + "'");
  out << to_json(d).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Word vectors

/// token -> D-dimensional embedding, loaded from the standard text format
/// (one line per token: token followed by D decimal floats).
struct WordVectorTable {
  int dim = 0;
  std::unordered_map<std::string, std::vector<double>> vectors;

  /// Unknown tokens resolve to the zero vector; *known reports the miss.
  std::vector<double> lookup(const std::string& token, bool* known = nullptr) const {
    auto it = vectors.find(token);
    if (it == vectors.end()) {
      if (known) *known = false;
      return std::vector<double>(static_cast<size_t>(dim), 0.0);
    }
    if (known) *known = true;
    return it->second;
  }

  void insert(const std::string& token, std::vector<double> vec) {
    if (dim == 0) dim = static_cast<int>(vec.size());
    if (static_cast<int>(vec.size()) != dim)
      throw std::runtime_error("word vectors: dimension mismatch for token '" + token + "'");
    vectors[token] = std::move(vec);
  }
};

inline WordVectorTable load_word_vectors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("word vectors: cannot open '" + path + "'");
  WordVectorTable table;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    std::vector<double> vec;
    double v;
    while (ss >> v) vec.push_back(v);
    if (vec.empty())
      throw std::runtime_error("word vectors: no values on line " + std::to_string(lineno));
    try {
      table.insert(token, std::move(vec));
    } catch (const std::exception& ex) {
      throw std::runtime_error(std::string(ex.what()) + " (line " + std::to_string(lineno) + ")");
    }
  }
  if (table.vectors.empty()) throw std::runtime_error("word vectors: empty file '" + path + "'");
  return table;
}

inline void save_word_vectors(const WordVectorTable& table, const std::string& path) {
  std::vector<std::string> tokens;
  tokens.reserve(table.vectors.size());
  for (const auto& [tok, _] : table.vectors) tokens.push_back(tok);
  std::sort(tokens.begin(), tokens.end());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("word vectors: cannot write '" + path + "'");
  out.precision(17);
  for (const auto& tok : tokens) {
    out << tok;
    for (double v : table.vectors.at(tok)) out << ' ' << v;
    out << '\n';
  }
}

/// Deterministic synthetic embeddings: each token gets a unit-normalized
/// vector seeded from its own hash, so tables are reproducible without
/// shipping a pretrained file.
/// Deterministic per-token Gaussian vectors, scaled to the magnitude of
/// typical 50-d distributional embeddings. At unit norm the 0.5-sigma text
/// kernel cannot tell same-shape phrases apart.
inline WordVectorTable make_synthetic_word_table(const std::vector<std::string>& tokens,
                                                 int dim = 50, uint64_t seed = 17,
                                                 double norm = 4.0) {
  WordVectorTable table;
  table.dim = dim;
  for (const auto& tok : tokens) {
    std::mt19937_64 rng(fnv1a64(tok) ^ seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> v(static_cast<size_t>(dim));
    for (double& x : v) x = gauss(rng);
    double n = std::sqrt(dot(v, v));
    if (n > 0)
      for (double& x : v) x *= norm / n;
    table.vectors[tok] = std::move(v);
  }
  return table;
}

struct PhraseEmbedding {
  std::vector<double> vec;
  int unknown_tokens = 0;
};

/// Mean of per-token word vectors. Unknown tokens contribute zero vectors
/// but still count in the denominator.
inline PhraseEmbedding phrase_embedding(const Phrase& phrase, const WordVectorTable& table) {
  if (phrase.empty()) throw std::runtime_error("phrase_embedding: empty phrase");
  PhraseEmbedding out;
  out.vec.assign(static_cast<size_t>(table.dim), 0.0);
  for (const auto& tok : phrase) {
    bool known = true;
    const std::vector<double> v = table.lookup(tok, &known);
    if (!known) ++out.unknown_tokens;
    for (size_t i = 0; i < out.vec.size(); ++i) out.vec[i] += v[i];
  }
  const double inv = 1.0 / static_cast<double>(phrase.size());
  for (double& x : out.vec) x *= inv;
  return out;
}

}  // namespace groundnav::db
