#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "groundnav/common.hpp"
#include "groundnav/instruction.hpp"

namespace groundnav::align {

constexpr double kNearbyRadius = 1.41;
constexpr double kSmoothing = 0.1;  // add-delta for token distributions
constexpr double kNullPriorFloor = 0.1;
inline const std::string kNullObject = "<null>";

struct LayoutObject {
  std::string id;
  double x = 0, y = 0;
};

struct AlignedExample {
  std::string instruction;
  std::vector<std::array<double, 2>> trajectory;
  std::vector<LayoutObject> layout;
};

/// Objects within `radius` of any trajectory point, in layout order.
inline std::vector<std::string> nearby_objects(const std::vector<LayoutObject>& layout,
                                               const std::vector<std::array<double, 2>>& trajectory,
                                               double radius = kNearbyRadius) {
  std::vector<std::string> out;
  for (const auto& o : layout) {
    for (const auto& p : trajectory) {
      if (std::hypot(o.x - p[0], o.y - p[1]) <= radius) {
        out.push_back(o.id);
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus JSONL

inline std::vector<AlignedExample> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("corpus: cannot open '" + path + "'");
  std::vector<AlignedExample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    AlignedExample ex;
    ex.instruction = j.at("instruction").get<std::string>();
    for (const auto& p : j.at("trajectory"))
      ex.trajectory.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    for (const auto& o : j.at("layout"))
      ex.layout.push_back({o.at("id").get<std::string>(), o.at("x").get<double>(), o.at("y").get<double>()});
    out.push_back(std::move(ex));
  }
  return out;
}

inline void save_corpus(const std::vector<AlignedExample>& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("corpus: cannot write '" + path + "'");
  for (const auto& ex : corpus) {
    nlohmann::json traj = nlohmann::json::array();
    for (const auto& p : ex.trajectory) traj.push_back({p[0], p[1]});
    nlohmann::json layout = nlohmann::json::array();
    for (const auto& o : ex.layout) layout.push_back({{"id", o.id}, {"x", o.x}, {"y", o.y}});
    out << nlohmann::json{{"instruction", ex.instruction}, {"trajectory", traj}, {"layout", layout}}
               .dump()
        << "\n";
  }
}

// ---------------------------------------------------------------------------
// Alignment model

/// Count-based unigram alignment: each object (plus NULL) owns a smoothed
/// token distribution; priors come from candidate frequency counts.
struct AlignmentModel {
  std::vector<std::string> vocab;  // sorted
  std::unordered_map<std::string, int> vocab_index;
  std::map<std::string, std::vector<double>> token_dist;  // p(token | object)
  std::map<std::string, double> prior;                    // p(object)

  int vocab_size() const { return static_cast<int>(vocab.size()); }

  /// p(token | object); unknown tokens and unseen objects fall back to
  /// the uniform 1/V so likelihood comparisons stay well defined.
  double token_prob(const std::string& object, const std::string& token) const {
    const double uniform = vocab.empty() ? 1.0 : 1.0 / static_cast<double>(vocab.size());
    auto vi = vocab_index.find(token);
    if (vi == vocab_index.end()) return uniform;
    auto oi = token_dist.find(object);
    if (oi == token_dist.end()) return uniform;
    return oi->second[static_cast<size_t>(vi->second)];
  }
};

namespace detail {

struct ChunkedExample {
  std::vector<lang::Phrase> chunks;
  std::vector<std::string> candidates;  // nearby objects, NULL excluded
};

inline std::vector<ChunkedExample> chunk_corpus(const std::vector<AlignedExample>& corpus,
                                                const lang::Lexicon& lexicon) {
  std::vector<ChunkedExample> out;
  for (const auto& ex : corpus) {
    ChunkedExample ce;
    for (const auto& c : lang::chunk(lang::tokenize(ex.instruction), lexicon))
      ce.chunks.push_back(c.tokens);
    ce.candidates = nearby_objects(ex.layout, ex.trajectory);
    out.push_back(std::move(ce));
  }
  return out;
}

inline double chunk_likelihood(const AlignmentModel& m, const std::string& object,
                               const lang::Phrase& chunk) {
  double p = 1.0;
  for (const auto& tok : chunk) p *= m.token_prob(object, tok);
  return p;
}

}  // namespace detail

struct EmResult {
  AlignmentModel model;
  std::vector<double> log_likelihood;  // element 0 is the initial model's
};

/// EM over the bag-of-chunks / bag-of-candidates model. E-step: posterior
/// responsibility of each candidate (and NULL) for each chunk. M-step:
/// responsibility-weighted token counts with add-delta smoothing.
inline EmResult em_train(const std::vector<AlignedExample>& corpus, const lang::Lexicon& lexicon,
                         int iterations, double delta = kSmoothing) {
  if (corpus.empty()) throw std::runtime_error("em_train: empty corpus");
  const auto chunked = detail::chunk_corpus(corpus, lexicon);

  EmResult res;
  AlignmentModel& m = res.model;
  {
    std::map<std::string, int> vocab_set;
    for (const auto& ce : chunked)
      for (const auto& ch : ce.chunks)
        for (const auto& tok : ch) vocab_set[tok] = 1;
    for (const auto& [tok, _] : vocab_set) {
      m.vocab_index[tok] = static_cast<int>(m.vocab.size());
      m.vocab.push_back(tok);
    }
  }
  const int v = m.vocab_size();
  if (v == 0) throw std::runtime_error("em_train: corpus produced no chunks");

  // priors: candidate frequency counts, NULL floored at the excess-chunk rate
  std::map<std::string, double> counts;
  double total_chunks = 0, excess_chunks = 0;
  for (const auto& ce : chunked) {
    for (const auto& id : ce.candidates) counts[id] += 1.0;
    total_chunks += static_cast<double>(ce.chunks.size());
    excess_chunks += std::max<double>(0.0, static_cast<double>(ce.chunks.size()) -
                                              static_cast<double>(ce.candidates.size()));
  }
  const double null_prior =
      counts.empty() ? 1.0
                     : std::max(kNullPriorFloor, total_chunks > 0 ? excess_chunks / total_chunks : 0.0);
  double count_sum = 0;
  for (const auto& [id, c] : counts) count_sum += c;
  m.prior[kNullObject] = null_prior;
  for (const auto& [id, c] : counts) m.prior[id] = (1.0 - null_prior) * c / count_sum;

  const double uniform = 1.0 / static_cast<double>(v);
  m.token_dist[kNullObject] = std::vector<double>(v, uniform);
  for (const auto& [id, _] : counts) m.token_dist[id] = std::vector<double>(v, uniform);

  auto corpus_ll = [&]() {
    double ll = 0;
    for (const auto& ce : chunked)
      for (const auto& ch : ce.chunks) {
        double p = m.prior.at(kNullObject) * detail::chunk_likelihood(m, kNullObject, ch);
        for (const auto& id : ce.candidates)
          p += m.prior.at(id) * detail::chunk_likelihood(m, id, ch);
        ll += std::log(std::max(p, 1e-300));
      }
    return ll;
  };
  res.log_likelihood.push_back(corpus_ll());

  for (int iter = 0; iter < iterations; ++iter) {
    std::map<std::string, std::vector<double>> weighted(m.token_dist.begin(), m.token_dist.end());
    for (auto& [id, w] : weighted) std::fill(w.begin(), w.end(), 0.0);

    for (const auto& ce : chunked)
      for (const auto& ch : ce.chunks) {
        std::vector<std::pair<std::string, double>> resp;
        resp.push_back({kNullObject,
                        m.prior.at(kNullObject) * detail::chunk_likelihood(m, kNullObject, ch)});
        for (const auto& id : ce.candidates)
          resp.push_back({id, m.prior.at(id) * detail::chunk_likelihood(m, id, ch)});
        double z = 0;
        for (const auto& [id, w] : resp) z += w;
        if (z <= 0) continue;
        for (const auto& [id, w] : resp) {
          const double q = w / z;
          auto& dist = weighted.at(id);
          for (const auto& tok : ch) dist[m.vocab_index.at(tok)] += q;
        }
      }

    for (auto& [id, w] : weighted) {
      double s = 0;
      for (double c : w) s += c;
      auto& dist = m.token_dist.at(id);
      const double denom = s + delta * static_cast<double>(v);
      for (int i = 0; i < v; ++i) dist[i] = (w[i] + delta) / denom;
    }
    res.log_likelihood.push_back(corpus_ll());
  }
  return res;
}

/// arg max over candidates (NULL always included) of p(o) * prod p(token|o);
/// ties break to the lexicographically smallest id.
inline std::string resolve(const AlignmentModel& model, const lang::Phrase& chunk,
                           const std::vector<std::string>& candidates) {
  std::vector<std::string> ids = candidates;
  ids.push_back(kNullObject);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::string best;
  double best_score = -1;
  for (const auto& id : ids) {
    auto pi = model.prior.find(id);
    const double prior = pi == model.prior.end() ? 0.0 : pi->second;
    const double score = prior * detail::chunk_likelihood(model, id, chunk);
    if (score > best_score) {
      best_score = score;
      best = id;
    }
  }
  return best;
}

/// Labeled chunks for the reference classifier: 1 when the chunk resolves to
/// a real object, 0 when it resolves to NULL.
inline std::vector<lang::LabeledChunk> extract_reference_dataset(
    const std::vector<AlignedExample>& corpus, const AlignmentModel& model,
    const lang::Lexicon& lexicon) {
  std::vector<lang::LabeledChunk> out;
  for (const auto& ex : corpus) {
    const auto candidates = nearby_objects(ex.layout, ex.trajectory);
    for (const auto& c : lang::chunk(lang::tokenize(ex.instruction), lexicon)) {
      lang::LabeledChunk lc;
      lc.tokens = c.tokens;
      lc.label = resolve(model, c.tokens, candidates) != kNullObject ? 1 : 0;
      out.push_back(std::move(lc));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model serialization

inline nlohmann::json model_to_json(const AlignmentModel& m) {
  nlohmann::json dists = nlohmann::json::object();
  for (const auto& [id, dist] : m.token_dist) dists[id] = dist;
  nlohmann::json priors = nlohmann::json::object();
  for (const auto& [id, p] : m.prior) priors[id] = p;
  return {{"vocab", m.vocab}, {"token_dist", dists}, {"prior", priors}};
}

inline AlignmentModel model_from_json(const nlohmann::json& j) {
  AlignmentModel m;
  m.vocab = j.at("vocab").get<std::vector<std::string>>();
  for (size_t i = 0; i < m.vocab.size(); ++i) m.vocab_index[m.vocab[i]] = static_cast<int>(i);
  for (const auto& [id, dist] : j.at("token_dist").items()) {
    m.token_dist[id] = dist.get<std::vector<double>>();
    if (m.token_dist[id].size() != m.vocab.size())
      throw std::runtime_error("alignment model: distribution length mismatch for '" + id + "'");
  }
  for (const auto& [id, p] : j.at("prior").items()) m.prior[id] = p.get<double>();
  return m;
}

inline void save_model(const AlignmentModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("alignment model: cannot write '" + path + "'");
  out << model_to_json(m).dump(2) << "\n";
}

inline AlignmentModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("alignment model: cannot open '" + path + "'");
  nlohmann::json j;
  in >> j;
  return model_from_json(j);
}

// ---------------------------------------------------------------------------
// Synthetic corpus with generation-time gold alignments

struct SyntheticCorpus {
  std::vector<AlignedExample> examples;
  // gold[i][k]: object id (or NULL) for the k-th chunk of example i
  std::vector<std::vector<std::string>> gold;
};

/// Template-generated navigation corpus over a fixed 5-object catalog. The
/// mentioned object is always placed near the trajectory, so EM can recover
/// the naming distributions; NULL-class templates yield chunks with no
/// co-occurring referent.
inline SyntheticCorpus make_synthetic_corpus(int n_examples, uint64_t seed,
                                             const lang::Lexicon& lexicon, double env_edge = 4.7) {
  struct Catalog {
    std::string id;
    std::string color, noun;
  };
  const std::vector<Catalog> catalog = {
      {"red_barrel", "red", "barrel"},   {"blue_planter", "blue", "planter"},
      {"green_globe", "green", "globe"}, {"yellow_lamp", "yellow", "lamp"},
      {"purple_chair", "purple", "chair"},
  };
  const std::vector<std::string> object_templates = {
      "go to the % and stop", "head toward that %", "pass the % then stop",
      "stop near the %",      "face this % and wait", "move past the % slowly",
  };
  // naming variants: optional size adjective or a generic head noun
  const std::vector<std::pair<std::string, std::string>> name_variants = {
      {"", ""},      {"big ", ""},    {"small ", ""}, {"tall ", ""},
      {"short ", ""}, {"", " object"}, {"", " thing"},
  };
  const std::vector<std::string> null_templates = {
      "come to a full stop",     "go to the left",
      "go to the middle",        "stay in the center",
      "stop at the edge",        "wait at the near corner",
      "go to the far side",      "go the other way",
      "stop at the end",         "head to the first spot",
      "stay at the front",       "move to the back",
      "go to the right side",    "stop at the second corner",
      "stop at the last spot",   "turn around slowly then stop",
      "move straight ahead",
  };

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> place(0.3, env_edge - 0.3);
  std::uniform_int_distribution<int> pick_obj(0, static_cast<int>(catalog.size()) - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SyntheticCorpus out;
  // templates are dealt round robin so every phrasing appears even in
  // small corpora and the chunk vocabulary is complete
  size_t next_obj_tpl = 0, next_variant = 0, next_null_tpl = 0;
  for (int n = 0; n < n_examples; ++n) {
    AlignedExample ex;
    const bool object_example = unit(rng) < 0.6;
    int target = -1;
    if (object_example) {
      target = pick_obj(rng);
      const auto& [size_adj, generic] = name_variants[next_variant++ % name_variants.size()];
      const std::string name = generic.empty()
                                   ? size_adj + catalog[target].color + " " + catalog[target].noun
                                   : catalog[target].color + generic;
      ex.instruction = object_templates[next_obj_tpl++ % object_templates.size()];
      ex.instruction.replace(ex.instruction.find('%'), 1, name);
    } else {
      ex.instruction = null_templates[next_null_tpl++ % null_templates.size()];
    }

    // trajectory: straight segment between two random points; instructions
    // without a referent are stop-and-turn commands, so their paths are short
    const double x0 = place(rng), y0 = place(rng);
    double x1 = place(rng), y1 = place(rng);
    if (!object_example) {
      const double ang = 2 * M_PI * unit(rng), len = 0.3 + 0.5 * unit(rng);
      x1 = clampd(x0 + len * std::cos(ang), 0.3, env_edge - 0.3);
      y1 = clampd(y0 + len * std::sin(ang), 0.3, env_edge - 0.3);
    }
    const int steps = 12;
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      ex.trajectory.push_back({x0 + t * (x1 - x0), y0 + t * (y1 - y0)});
    }

    // layout: the mentioned object near the path plus a random subset of
    // distractors, so instructions with no mention can also have no nearby
    // object and the NULL rate is identifiable from excess chunks
    for (size_t i = 0; i < catalog.size(); ++i) {
      LayoutObject o;
      o.id = catalog[i].id;
      if (static_cast<int>(i) == target) {
        const auto& p = ex.trajectory[std::uniform_int_distribution<size_t>(
            0, ex.trajectory.size() - 1)(rng)];
        const double ang = 2 * M_PI * unit(rng), rad = 0.2 + 0.8 * unit(rng);
        o.x = clampd(p[0] + rad * std::cos(ang), 0.1, env_edge - 0.1);
        o.y = clampd(p[1] + rad * std::sin(ang), 0.1, env_edge - 0.1);
      } else {
        if (unit(rng) >= 0.6) continue;
        o.x = place(rng);
        o.y = place(rng);
      }
      ex.layout.push_back(std::move(o));
    }

    std::vector<std::string> gold;
    for (const auto& c : lang::chunk(lang::tokenize(ex.instruction), lexicon)) {
      bool mentions = false;
      if (target >= 0) {
        bool has_color = false, has_head = false;
        for (const auto& tok : c.tokens) {
          has_color = has_color || tok == catalog[target].color;
          has_head = has_head || tok == catalog[target].noun || tok == "object" || tok == "thing";
        }
        mentions = has_color && has_head;
      }
      gold.push_back(mentions ? catalog[target].id : kNullObject);
    }
    out.examples.push_back(std::move(ex));
    out.gold.push_back(std::move(gold));
  }
  return out;
}

}  // namespace groundnav::align
