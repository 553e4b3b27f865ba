#pragma once

#include <cctype>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "groundnav/common.hpp"
#include "groundnav/exemplar_db.hpp"

namespace groundnav::lang {

using db::Phrase;

constexpr const char* kPlaceholder = "OBJ_REF";
constexpr double kRefMixWeight = 0.5;  // lambda_R1
constexpr double kRefThreshold = 0.03; // T_R2

// ---------------------------------------------------------------------------
// Tokenization

inline std::vector<std::string> tokenize(const std::string& raw) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (char ch : raw) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else if (std::ispunct(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-') {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// POS lexicon

enum Tag : uint32_t {
  kNoun = 1u << 0,   // can head a chunk on its own
  kNoun2 = 1u << 1,  // nominal only after a determiner ("the left")
  kAdj = 1u << 2,
  kDet = 1u << 3,
  kPron = 1u << 4,
  kVerb = 1u << 5,
  kAdv = 1u << 6,
  kPrep = 1u << 7,
  kConj = 1u << 8,
  kNum = 1u << 9,
};

struct Lexicon {
  std::unordered_map<std::string, uint32_t> tags;

  uint32_t tags_of(const std::string& token) const {
    auto it = tags.find(token);
    return it == tags.end() ? 0u : it->second;
  }
  bool has(const std::string& token, Tag t) const { return (tags_of(token) & t) != 0; }
};

namespace detail {

inline const std::vector<std::pair<const char*, uint32_t>>& tag_names() {
  static const std::vector<std::pair<const char*, uint32_t>> names = {
      {"noun", kNoun}, {"noun2", kNoun2}, {"adj", kAdj}, {"det", kDet}, {"pron", kPron},
      {"verb", kVerb}, {"adv", kAdv}, {"prep", kPrep}, {"conj", kConj}, {"num", kNum}};
  return names;
}

inline uint32_t parse_tags(const std::string& field, int line_no) {
  uint32_t mask = 0;
  std::stringstream ss(field);
  std::string name;
  while (std::getline(ss, name, ',')) {
    bool found = false;
    for (const auto& [n, bit] : tag_names())
      if (name == n) {
        mask |= bit;
        found = true;
      }
    if (!found)
      throw std::runtime_error("lexicon line " + std::to_string(line_no) + ": unknown tag '" + name + "'");
  }
  return mask;
}

}  // namespace detail

inline Lexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("lexicon: cannot open '" + path + "'");
  Lexicon lex;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("lexicon line " + std::to_string(line_no) + ": expected 'token<TAB>tags'");
    lex.tags[line.substr(0, tab)] |= detail::parse_tags(line.substr(tab + 1), line_no);
  }
  return lex;
}

inline void save_lexicon(const Lexicon& lex, const std::string& path) {
  std::vector<std::string> tokens;
  for (const auto& [tok, mask] : lex.tags) tokens.push_back(tok);
  std::sort(tokens.begin(), tokens.end());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("lexicon: cannot write '" + path + "'");
  for (const auto& tok : tokens) {
    const uint32_t mask = lex.tags.at(tok);
    std::string tags;
    for (const auto& [n, bit] : detail::tag_names())
      if (mask & bit) {
        if (!tags.empty()) tags += ",";
        tags += n;
      }
    out << tok << "\t" << tags << "\n";
  }
}

/// Vocabulary shipped with the simulator: colors, shapes, navigation verbs,
/// and function words.
inline Lexicon builtin_lexicon() {
  Lexicon lex;
  auto add = [&lex](std::initializer_list<const char*> words, uint32_t mask) {
    for (const char* w : words) lex.tags[w] |= mask;
  };
  add({"the", "a", "an", "this", "that"}, kDet);
  add({"it"}, kPron);
  add({"disk", "box", "cone", "object", "thing", "marker", "barrel", "planter", "globe",
       "lamp", "chair", "table", "block", "cylinder", "pyramid"},
      kNoun);
  add({"left", "right", "front", "back", "side", "middle", "center", "corner", "edge",
       "end", "way", "spot", "stop"},
      kNoun2);
  add({"red", "green", "blue", "yellow", "purple", "orange", "cyan", "magenta", "white",
       "gray", "pink", "brown", "teal", "olive", "navy", "maroon", "big", "small", "tall",
       "short", "near", "far", "full", "other", "first", "second", "last"},
      kAdj);
  add({"go", "turn", "move", "head", "fly", "drive", "pass", "stop", "reach", "approach",
       "face", "come", "make", "continue", "curve", "veer", "proceed"},
      kVerb);
  add({"forward", "backward", "straight", "ahead", "around", "slowly", "quickly", "again",
       "left", "right", "back"},
      kAdv);
  add({"to", "at", "by", "near", "past", "toward", "towards", "behind", "before", "after",
       "around", "between", "through", "over", "under", "from", "of", "on", "in", "with",
       "until", "beyond"},
      kPrep);
  add({"and", "then", "while"}, kConj);
  add({"one", "two", "three"}, kNum);
  return lex;
}

// ---------------------------------------------------------------------------
// Noun chunking

struct NounChunk {
  int start = 0, end = 0;  // [start, end) token span
  Phrase tokens;
};

/// Maximal (DET? ADJ* NOUN+) spans, scanning left to right. Words tagged
/// noun2 can extend the noun run only in determiner-initiated chunks, so
/// "turn left" yields nothing while "the left" chunks. Pronouns form
/// single-token chunks.
inline std::vector<NounChunk> chunk(const std::vector<std::string>& tokens, const Lexicon& lex) {
  std::vector<NounChunk> out;
  const int n = static_cast<int>(tokens.size());
  int i = 0;
  while (i < n) {
    if (lex.has(tokens[i], kPron)) {
      out.push_back({i, i + 1, {tokens[i]}});
      ++i;
      continue;
    }
    int j = i;
    bool has_det = false;
    if (lex.has(tokens[j], kDet)) {
      ++j;
      has_det = true;
    }
    int k = j;
    while (k < n && lex.has(tokens[k], kAdj) && !lex.has(tokens[k], kNoun)) ++k;
    int m = k;
    while (m < n && (lex.has(tokens[m], kNoun) || (has_det && lex.has(tokens[m], kNoun2)))) ++m;
    if (m > k) {
      NounChunk c;
      c.start = i;
      c.end = m;
      c.tokens.assign(tokens.begin() + i, tokens.begin() + m);
      out.push_back(std::move(c));
      i = m;
    } else {
      ++i;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Object reference classifier

/// Small perceptron over the chunk's mean word vector. Raw output z is
/// unbounded with lower = more object-like; the decision rule adds the
/// phrase-distance term and thresholds at T_R2.
struct ObjRefClassifier {
  int in_dim = 0;
  int hidden_dim = 0;
  std::vector<double> w1;  // hidden x in
  std::vector<double> b1;
  std::vector<double> w2;  // 1 x hidden
  double b2 = 0;
  double lambda_r1 = kRefMixWeight;
  double t_r2 = kRefThreshold;
};

inline ObjRefClassifier make_objref(int in_dim, int hidden_dim, uint64_t seed) {
  ObjRefClassifier c;
  c.in_dim = in_dim;
  c.hidden_dim = hidden_dim;
  c.w1.assign(static_cast<size_t>(hidden_dim) * in_dim, 0.0);
  c.b1.assign(hidden_dim, 0.0);
  c.w2.assign(hidden_dim, 0.0);
  std::mt19937_64 rng(seed);
  const double s1 = std::sqrt(6.0 / (in_dim + hidden_dim));
  const double s2 = std::sqrt(6.0 / (hidden_dim + 1));
  std::uniform_real_distribution<double> u1(-s1, s1), u2(-s2, s2);
  for (double& w : c.w1) w = u1(rng);
  for (double& w : c.w2) w = u2(rng);
  return c;
}

inline ObjRefClassifier make_zero_objref(int in_dim, int hidden_dim = 16) {
  ObjRefClassifier c;
  c.in_dim = in_dim;
  c.hidden_dim = hidden_dim;
  c.w1.assign(static_cast<size_t>(hidden_dim) * in_dim, 0.0);
  c.b1.assign(hidden_dim, 0.0);
  c.w2.assign(hidden_dim, 0.0);
  return c;
}

inline double objref_forward(const ObjRefClassifier& c, const std::vector<double>& x) {
  if (static_cast<int>(x.size()) != c.in_dim)
    throw std::runtime_error("objref_forward: input dimension mismatch");
  double z = c.b2;
  for (int i = 0; i < c.hidden_dim; ++i) {
    double s = c.b1[i];
    const double* row = &c.w1[static_cast<size_t>(i) * c.in_dim];
    for (int j = 0; j < c.in_dim; ++j) s += row[j] * x[j];
    if (s > 0) z += c.w2[i] * s;
  }
  return z;
}

/// Minimum squared word-vector distance from the chunk to any database phrase.
inline double min_phrase_distance(const std::vector<double>& chunk_vec,
                                  const db::ObjectDatabase& database,
                                  const db::WordVectorTable& table) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : database.entries)
    for (const auto& p : e.phrases)
      best = std::min(best, l2sq(chunk_vec, db::phrase_embedding(p, table).vec));
  return best;
}

/// Decision rule: ObjRefNN(vec) + lambda_R1 * min-phrase-distance < T_R2.
inline bool classify_reference(const NounChunk& c, const ObjRefClassifier& clf,
                               const db::ObjectDatabase& database,
                               const db::WordVectorTable& table) {
  const std::vector<double> vec = db::phrase_embedding(c.tokens, table).vec;
  const double score = objref_forward(clf, vec) + clf.lambda_r1 * min_phrase_distance(vec, database, table);
  return score < clf.t_r2;
}

// ---------------------------------------------------------------------------
// Classifier training

struct LabeledChunk {
  Phrase tokens;
  int label = 0;  // 1 = object reference
};

inline std::vector<LabeledChunk> load_labeled_chunks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("labeled chunks: cannot open '" + path + "'");
  std::vector<LabeledChunk> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("labeled chunks line " + std::to_string(line_no) + ": " + e.what());
    }
    LabeledChunk c;
    c.tokens = j.at("tokens").get<Phrase>();
    c.label = j.at("label").get<int>();
    if (c.label != 0 && c.label != 1)
      throw std::runtime_error("labeled chunks line " + std::to_string(line_no) + ": label must be 0 or 1");
    out.push_back(std::move(c));
  }
  return out;
}

inline void save_labeled_chunks(const std::vector<LabeledChunk>& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("labeled chunks: cannot write '" + path + "'");
  for (const auto& c : data)
    out << nlohmann::json{{"tokens", c.tokens}, {"label", c.label}}.dump() << "\n";
}

struct ObjRefTrainConfig {
  int hidden_dim = 16;
  double learning_rate = 0.05;
  int epochs = 300;
  uint64_t seed = 1;
};

struct ObjRefTrainResult {
  ObjRefClassifier clf;
  std::vector<double> epoch_loss;  // mean binary cross-entropy
  bool degenerate = false;         // single-class training data
};

/// Logistic regression through the perceptron: sigmoid(z) is trained toward
/// 1 - label, so object references drive z negative.
inline ObjRefTrainResult train_objref(const std::vector<LabeledChunk>& data,
                                      const db::WordVectorTable& table,
                                      const ObjRefTrainConfig& cfg) {
  if (data.empty()) throw std::runtime_error("train_objref: empty dataset");
  std::vector<std::vector<double>> xs;
  std::vector<double> targets;
  bool any0 = false, any1 = false;
  for (const auto& c : data) {
    xs.push_back(db::phrase_embedding(c.tokens, table).vec);
    targets.push_back(1.0 - c.label);
    (c.label ? any1 : any0) = true;
  }
  ObjRefTrainResult res;
  if (!any0 || !any1) {
    res.degenerate = true;
    res.clf = make_zero_objref(table.dim, cfg.hidden_dim);
    res.clf.b2 = any1 ? -4.0 : 4.0;
    return res;
  }
  res.clf = make_objref(table.dim, cfg.hidden_dim, cfg.seed);
  ObjRefClassifier& c = res.clf;
  std::mt19937_64 rng(cfg.seed ^ 0x6a09e667f3bcc909ULL);
  std::vector<size_t> order(xs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    for (size_t idx : order) {
      const auto& x = xs[idx];
      std::vector<double> act(c.hidden_dim, 0.0);
      double z = c.b2;
      for (int i = 0; i < c.hidden_dim; ++i) {
        double s = c.b1[i];
        const double* row = &c.w1[static_cast<size_t>(i) * c.in_dim];
        for (int j = 0; j < c.in_dim; ++j) s += row[j] * x[j];
        act[i] = s > 0 ? s : 0.0;
        z += c.w2[i] * act[i];
      }
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double y = targets[idx];
      total += -(y * std::log(std::max(p, 1e-12)) + (1 - y) * std::log(std::max(1 - p, 1e-12)));
      const double dz = p - y;
      c.b2 -= cfg.learning_rate * dz;
      for (int i = 0; i < c.hidden_dim; ++i) {
        const double dw2 = dz * act[i];
        const double dact = act[i] > 0 ? dz * c.w2[i] : 0.0;
        c.w2[i] -= cfg.learning_rate * dw2;
        if (dact != 0.0) {
          c.b1[i] -= cfg.learning_rate * dact;
          double* row = &c.w1[static_cast<size_t>(i) * c.in_dim];
          for (int j = 0; j < c.in_dim; ++j) row[j] -= cfg.learning_rate * dact * x[j];
        }
      }
    }
    res.epoch_loss.push_back(total / static_cast<double>(xs.size()));
  }
  return res;
}

/// Training-set accuracy of the raw classifier (z < 0 predicts reference).
inline double objref_accuracy(const ObjRefClassifier& clf, const std::vector<LabeledChunk>& data,
                              const db::WordVectorTable& table) {
  if (data.empty()) throw std::runtime_error("objref_accuracy: empty dataset");
  int hit = 0;
  for (const auto& c : data) {
    const double z = objref_forward(clf, db::phrase_embedding(c.tokens, table).vec);
    const int predicted = z < 0 ? 1 : 0;
    if (predicted == c.label) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

inline nlohmann::json objref_to_json(const ObjRefClassifier& c) {
  return {{"arch", {{"in", c.in_dim}, {"hidden", c.hidden_dim}}},
          {"w1", c.w1}, {"b1", c.b1}, {"w2", c.w2}, {"b2", c.b2},
          {"lambda_r1", c.lambda_r1}, {"t_r2", c.t_r2}};
}

inline ObjRefClassifier objref_from_json(const nlohmann::json& j) {
  ObjRefClassifier c;
  c.in_dim = j.at("arch").at("in").get<int>();
  c.hidden_dim = j.at("arch").at("hidden").get<int>();
  c.w1 = j.at("w1").get<std::vector<double>>();
  c.b1 = j.at("b1").get<std::vector<double>>();
  c.w2 = j.at("w2").get<std::vector<double>>();
  c.b2 = j.at("b2").get<double>();
  c.lambda_r1 = j.at("lambda_r1").get<double>();
  c.t_r2 = j.at("t_r2").get<double>();
  if (c.w1.size() != static_cast<size_t>(c.hidden_dim) * c.in_dim ||
      c.b1.size() != static_cast<size_t>(c.hidden_dim) ||
      c.w2.size() != static_cast<size_t>(c.hidden_dim))
    throw std::runtime_error("objref checkpoint: array sizes do not match arch");
  return c;
}

inline void save_objref(const ObjRefClassifier& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("objref checkpoint: cannot write '" + path + "'");
  out << objref_to_json(c).dump(2) << "\n";
}

inline ObjRefClassifier load_objref(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("objref checkpoint: cannot open '" + path + "'");
  nlohmann::json j;
  in >> j;
  return objref_from_json(j);
}

// ---------------------------------------------------------------------------
// Anonymization

struct ReferenceSet {
  std::vector<std::string> u_hat;       // instruction with OBJ_REF placeholders
  std::vector<NounChunk> references;    // in placeholder order
  std::vector<int> placeholder_pos;     // index of each placeholder in u_hat
};

inline ReferenceSet anonymize(const std::vector<std::string>& tokens,
                              const std::vector<NounChunk>& refs) {
  std::vector<NounChunk> sorted = refs;
  std::sort(sorted.begin(), sorted.end(),
            [](const NounChunk& a, const NounChunk& b) { return a.start < b.start; });
  int prev_end = 0;
  for (const auto& r : sorted) {
    if (r.start < prev_end) throw std::runtime_error("anonymize: overlapping reference spans");
    if (r.start < 0 || r.end > static_cast<int>(tokens.size()) || r.start >= r.end)
      throw std::runtime_error("anonymize: reference span out of bounds");
    prev_end = r.end;
  }
  ReferenceSet out;
  out.references = sorted;
  size_t next = 0;
  for (int i = 0; i < static_cast<int>(tokens.size());) {
    if (next < sorted.size() && i == sorted[next].start) {
      out.placeholder_pos.push_back(static_cast<int>(out.u_hat.size()));
      out.u_hat.push_back(kPlaceholder);
      i = sorted[next].end;
      ++next;
    } else {
      out.u_hat.push_back(tokens[i]);
      ++i;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Context encoding

/// Per-position encodings over the anonymized instruction. h_i concatenates
/// the mean word vector of up to `window` tokens on each side, so D_c = 2D
/// and the encoding of a placeholder position never sees the reference
/// tokens it replaced.
struct ContextEncoding {
  int dim = 0;  // D_c
  std::vector<std::vector<double>> h;    // one per u_hat position
  std::vector<std::vector<double>> psi;  // one per placeholder, in order
  std::vector<double> h_hat;             // mean of all h
};

inline ContextEncoding encode_context(const ReferenceSet& refset, const db::WordVectorTable& table,
                                      int window = 3) {
  if (refset.u_hat.empty()) throw std::runtime_error("encode_context: empty instruction");
  const int n = static_cast<int>(refset.u_hat.size());
  const int d = table.dim;
  ContextEncoding enc;
  enc.dim = 2 * d;
  enc.h_hat.assign(enc.dim, 0.0);
  for (int i = 0; i < n; ++i) {
    std::vector<double> hi(enc.dim, 0.0);
    const int l0 = std::max(0, i - window);
    if (i > l0) {
      for (int k = l0; k < i; ++k) {
        const auto v = table.lookup(refset.u_hat[k]);
        for (int c = 0; c < d; ++c) hi[c] += v[c];
      }
      for (int c = 0; c < d; ++c) hi[c] /= static_cast<double>(i - l0);
    }
    const int r1 = std::min(n, i + 1 + window);
    if (r1 > i + 1) {
      for (int k = i + 1; k < r1; ++k) {
        const auto v = table.lookup(refset.u_hat[k]);
        for (int c = 0; c < d; ++c) hi[d + c] += v[c];
      }
      for (int c = 0; c < d; ++c) hi[d + c] /= static_cast<double>(r1 - i - 1);
    }
    for (int c = 0; c < enc.dim; ++c) enc.h_hat[c] += hi[c];
    enc.h.push_back(std::move(hi));
  }
  for (double& v : enc.h_hat) v /= static_cast<double>(n);
  for (int pos : refset.placeholder_pos) enc.psi.push_back(enc.h[pos]);
  return enc;
}

}  // namespace groundnav::lang
