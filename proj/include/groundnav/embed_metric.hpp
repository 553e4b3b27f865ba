#pragma once

#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "groundnav/common.hpp"
#include "groundnav/exemplar_db.hpp"

namespace groundnav::metric {

using db::ImagePatch;
using db::ObjectDatabase;

constexpr double kMarginNear = 1.0;  // T_M1
constexpr double kMarginFar = 2.0;   // T_M2
constexpr double kImageKdeSigma = 2.0;
constexpr double kTextKdeSigma = 0.5;
constexpr int kEmbedDim = 16;

/// Two-layer perceptron `flattened patch -> hidden (relu) -> embedding`.
/// The L2 distance in the output space is the visual similarity measure.
struct EmbeddingNet {
  int in_dim = 0;
  int hidden_dim = 0;
  int out_dim = 0;
  std::vector<double> w1;  // hidden x in, row-major
  std::vector<double> b1;
  std::vector<double> w2;  // out x hidden, row-major
  std::vector<double> b2;

  size_t param_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }

  double* param(size_t i) {
    if (i < w1.size()) return &w1[i];
    i -= w1.size();
    if (i < b1.size()) return &b1[i];
    i -= b1.size();
    if (i < w2.size()) return &w2[i];
    i -= w2.size();
    return &b2[i];
  }
};

inline EmbeddingNet make_net(int in_dim, int hidden_dim, int out_dim, uint64_t seed) {
  EmbeddingNet net;
  net.in_dim = in_dim;
  net.hidden_dim = hidden_dim;
  net.out_dim = out_dim;
  net.w1.assign(static_cast<size_t>(hidden_dim) * in_dim, 0.0);
  net.b1.assign(hidden_dim, 0.0);
  net.w2.assign(static_cast<size_t>(out_dim) * hidden_dim, 0.0);
  net.b2.assign(out_dim, 0.0);
  std::mt19937_64 rng(seed);
  const double s1 = std::sqrt(6.0 / (in_dim + hidden_dim));
  const double s2 = std::sqrt(6.0 / (hidden_dim + out_dim));
  std::uniform_real_distribution<double> u1(-s1, s1), u2(-s2, s2);
  for (double& w : net.w1) w = u1(rng);
  for (double& w : net.w2) w = u2(rng);
  return net;
}

/// All-zero parameters: embeds every input to the same point. Used as the
/// chance-level reference in retrieval evaluation.
inline EmbeddingNet make_constant_net(int in_dim, int hidden_dim, int out_dim) {
  EmbeddingNet net;
  net.in_dim = in_dim;
  net.hidden_dim = hidden_dim;
  net.out_dim = out_dim;
  net.w1.assign(static_cast<size_t>(hidden_dim) * in_dim, 0.0);
  net.b1.assign(hidden_dim, 0.0);
  net.w2.assign(static_cast<size_t>(out_dim) * hidden_dim, 0.0);
  net.b2.assign(out_dim, 0.0);
  return net;
}

namespace detail {

struct ForwardCache {
  std::vector<double> input;
  std::vector<double> pre1;  // W1 x + b1
  std::vector<double> act1;  // relu(pre1)
  std::vector<double> out;
};

inline ForwardCache forward(const EmbeddingNet& net, const ImagePatch& patch) {
  if (static_cast<int>(patch.count()) != net.in_dim)
    throw std::runtime_error("embed: patch size " + std::to_string(patch.count()) +
                             " does not match net input " + std::to_string(net.in_dim));
  ForwardCache c;
  c.input.assign(patch.data.begin(), patch.data.end());
  c.pre1.assign(net.hidden_dim, 0.0);
  for (int i = 0; i < net.hidden_dim; ++i) {
    double s = net.b1[i];
    const double* row = &net.w1[static_cast<size_t>(i) * net.in_dim];
    for (int j = 0; j < net.in_dim; ++j) s += row[j] * c.input[j];
    c.pre1[i] = s;
  }
  c.act1.resize(net.hidden_dim);
  for (int i = 0; i < net.hidden_dim; ++i) c.act1[i] = c.pre1[i] > 0 ? c.pre1[i] : 0.0;
  c.out.assign(net.out_dim, 0.0);
  for (int i = 0; i < net.out_dim; ++i) {
    double s = net.b2[i];
    const double* row = &net.w2[static_cast<size_t>(i) * net.hidden_dim];
    for (int j = 0; j < net.hidden_dim; ++j) s += row[j] * c.act1[j];
    c.out[i] = s;
  }
  return c;
}

struct NetGrad {
  std::vector<double> w1, b1, w2, b2;

  explicit NetGrad(const EmbeddingNet& net)
      : w1(net.w1.size(), 0.0), b1(net.b1.size(), 0.0), w2(net.w2.size(), 0.0), b2(net.b2.size(), 0.0) {}

  double* param(size_t i) {
    if (i < w1.size()) return &w1[i];
    i -= w1.size();
    if (i < b1.size()) return &b1[i];
    i -= b1.size();
    if (i < w2.size()) return &w2[i];
    i -= w2.size();
    return &b2[i];
  }
};

/// Accumulate d(loss)/d(params) for one embedded image given d(loss)/d(out).
inline void backward(const EmbeddingNet& net, const ForwardCache& c,
                     const std::vector<double>& dout, NetGrad& g) {
  std::vector<double> dact(net.hidden_dim, 0.0);
  for (int i = 0; i < net.out_dim; ++i) {
    const double d = dout[i];
    if (d == 0.0) continue;
    g.b2[i] += d;
    double* wrow = &g.w2[static_cast<size_t>(i) * net.hidden_dim];
    const double* w = &net.w2[static_cast<size_t>(i) * net.hidden_dim];
    for (int j = 0; j < net.hidden_dim; ++j) {
      wrow[j] += d * c.act1[j];
      dact[j] += d * w[j];
    }
  }
  for (int i = 0; i < net.hidden_dim; ++i) {
    // relu subgradient: zero branch at the kink
    const double d = c.pre1[i] > 0 ? dact[i] : 0.0;
    if (d == 0.0) continue;
    g.b1[i] += d;
    double* wrow = &g.w1[static_cast<size_t>(i) * net.in_dim];
    for (int j = 0; j < net.in_dim; ++j) wrow[j] += d * c.input[j];
  }
}

}  // namespace detail

inline std::vector<double> embed(const EmbeddingNet& net, const ImagePatch& patch) {
  return detail::forward(net, patch).out;
}

struct TripletBatch {
  ImagePatch anchor;
  std::vector<ImagePatch> positives;
  std::vector<ImagePatch> negatives;
  double margin_near = kMarginNear;  // T_M1
  double margin_far = kMarginFar;    // T_M2
};

struct TripletEval {
  double loss = 0;
  double s_pos = 0;  // min squared distance anchor -> positives
  double s_neg = 0;  // min squared distance anchor -> negatives
};

namespace detail {

inline size_t argmin_dist(const std::vector<double>& anchor,
                          const std::vector<ForwardCache>& set, double* best) {
  size_t arg = 0;
  *best = l2sq(anchor, set[0].out);
  for (size_t j = 1; j < set.size(); ++j) {
    const double d = l2sq(anchor, set[j].out);
    if (d < *best) {
      *best = d;
      arg = j;
    }
  }
  return arg;
}

inline TripletEval triplet_core(const EmbeddingNet& net, const TripletBatch& batch,
                                NetGrad* grad) {
  if (batch.positives.empty() || batch.negatives.empty())
    throw std::runtime_error("triplet_loss: positives and negatives must be non-empty");
  if (!(batch.margin_far > batch.margin_near && batch.margin_near > 0))
    throw std::runtime_error("triplet_loss: margins must satisfy T_M2 > T_M1 > 0");

  const ForwardCache anchor = forward(net, batch.anchor);
  std::vector<ForwardCache> pos, neg;
  pos.reserve(batch.positives.size());
  neg.reserve(batch.negatives.size());
  for (const auto& p : batch.positives) pos.push_back(forward(net, p));
  for (const auto& n : batch.negatives) neg.push_back(forward(net, n));

  TripletEval ev;
  const size_t jp = argmin_dist(anchor.out, pos, &ev.s_pos);
  const size_t jn = argmin_dist(anchor.out, neg, &ev.s_neg);

  const bool h1 = ev.s_pos - batch.margin_far > 0;
  const bool h2 = batch.margin_far - ev.s_neg > 0;
  const bool h3 = ev.s_pos - ev.s_neg + batch.margin_near > 0;
  ev.loss = (h1 ? ev.s_pos - batch.margin_far : 0.0) +
            (h2 ? batch.margin_far - ev.s_neg : 0.0) +
            (h3 ? ev.s_pos - ev.s_neg + batch.margin_near : 0.0);

  if (grad) {
    const double dsp = (h1 ? 1.0 : 0.0) + (h3 ? 1.0 : 0.0);
    const double dsn = (h2 ? -1.0 : 0.0) + (h3 ? -1.0 : 0.0);
    const int E = net.out_dim;
    std::vector<double> danchor(E, 0.0), dpos(E, 0.0), dneg(E, 0.0);
    for (int i = 0; i < E; ++i) {
      const double gp = 2.0 * (anchor.out[i] - pos[jp].out[i]);
      const double gn = 2.0 * (anchor.out[i] - neg[jn].out[i]);
      danchor[i] = dsp * gp + dsn * gn;
      dpos[i] = -dsp * gp;
      dneg[i] = -dsn * gn;
    }
    backward(net, anchor, danchor, *grad);
    backward(net, pos[jp], dpos, *grad);
    backward(net, neg[jn], dneg, *grad);
  }
  return ev;
}

}  // namespace detail

inline double triplet_loss(const EmbeddingNet& net, const TripletBatch& batch) {
  return detail::triplet_core(net, batch, nullptr).loss;
}

inline TripletEval triplet_loss_grad(const EmbeddingNet& net, const TripletBatch& batch,
                                     detail::NetGrad& grad) {
  return detail::triplet_core(net, batch, &grad);
}

// ---------------------------------------------------------------------------
// Training

/// Triplet indices into a shared patch pool.
struct TripletSpec {
  int anchor = 0;
  std::vector<int> positives;
  std::vector<int> negatives;
};

struct TrainConfig {
  double learning_rate = 0.003;
  int epochs = 3;
  uint64_t seed = 1;
  int hidden_dim = 32;
  double margin_near = kMarginNear;
  double margin_far = kMarginFar;
};

struct TrainResult {
  EmbeddingNet net;
  std::vector<double> epoch_mean_loss;
};

inline TripletBatch gather_triplet(const std::vector<ImagePatch>& pool, const TripletSpec& t,
                                   double m1, double m2) {
  TripletBatch b;
  b.anchor = pool[t.anchor];
  for (int i : t.positives) b.positives.push_back(pool[i]);
  for (int i : t.negatives) b.negatives.push_back(pool[i]);
  b.margin_near = m1;
  b.margin_far = m2;
  return b;
}

/// Plain SGD over the triplet stream, deterministic given cfg.seed.
inline TrainResult train_embedder(const std::vector<ImagePatch>& pool,
                                  const std::vector<TripletSpec>& triplets,
                                  const TrainConfig& cfg) {
  if (triplets.empty()) throw std::runtime_error("train_embedder: need at least one triplet");
  const int in_dim = static_cast<int>(pool.at(0).count());
  TrainResult res;
  res.net = make_net(in_dim, cfg.hidden_dim, kEmbedDim, cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<size_t> order(triplets.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    for (size_t idx : order) {
      detail::NetGrad grad(res.net);
      const TripletBatch b = gather_triplet(pool, triplets[idx], cfg.margin_near, cfg.margin_far);
      const TripletEval ev = triplet_loss_grad(res.net, b, grad);
      if (!std::isfinite(ev.loss))
        throw std::runtime_error("train_embedder: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", aborting");
      total += ev.loss;
      const double lr = cfg.learning_rate;
      for (size_t i = 0; i < res.net.w1.size(); ++i) res.net.w1[i] -= lr * grad.w1[i];
      for (size_t i = 0; i < res.net.b1.size(); ++i) res.net.b1[i] -= lr * grad.b1[i];
      for (size_t i = 0; i < res.net.w2.size(); ++i) res.net.w2[i] -= lr * grad.w2[i];
      for (size_t i = 0; i < res.net.b2.size(); ++i) res.net.b2[i] -= lr * grad.b2[i];
    }
    res.epoch_mean_loss.push_back(total / static_cast<double>(triplets.size()));
  }
  return res;
}

inline double mean_triplet_loss(const EmbeddingNet& net, const std::vector<ImagePatch>& pool,
                                const std::vector<TripletSpec>& triplets,
                                double m1 = kMarginNear, double m2 = kMarginFar) {
  double total = 0;
  for (const auto& t : triplets) total += triplet_loss(net, gather_triplet(pool, t, m1, m2));
  return triplets.empty() ? 0.0 : total / static_cast<double>(triplets.size());
}

// ---------------------------------------------------------------------------
// Kernel density estimation

/// Per-object exemplar embeddings with a shared isotropic Gaussian kernel.
struct KdeModel {
  int dim = 0;
  double sigma = 1.0;
  std::map<std::string, std::vector<std::vector<double>>> exemplars;
};

inline KdeModel make_kde_model(int dim, double sigma) {
  if (!(sigma > 0)) throw std::runtime_error("kde: sigma must be positive");
  KdeModel m;
  m.dim = dim;
  m.sigma = sigma;
  return m;
}

/// pdf(query | object): mean of normalized Gaussian kernels over the
/// object's exemplar embeddings.
inline double kde_pdf(const KdeModel& model, const std::string& object_id,
                      const std::vector<double>& query) {
  auto it = model.exemplars.find(object_id);
  if (it == model.exemplars.end())
    throw std::runtime_error("kde_pdf: unknown object '" + object_id + "'");
  const auto& exes = it->second;
  if (exes.empty()) throw std::runtime_error("kde_pdf: object '" + object_id + "' has no exemplars");
  const double two_s2 = 2.0 * model.sigma * model.sigma;
  const double norm = std::pow(M_PI * two_s2, model.dim / 2.0);
  double s = 0;
  for (const auto& e : exes) s += std::exp(-l2sq(query, e) / two_s2);
  return s / (static_cast<double>(exes.size()) * norm);
}

struct Posterior {
  std::vector<double> probs;
  bool underflow = false;
};

constexpr double kKdeUnderflowFloor = 1e-300;

/// Bayes posterior over database objects. If every pdf underflows the
/// posterior falls back to the prior and reports it.
inline Posterior kde_posterior(const KdeModel& model, const ObjectDatabase& database,
                               const std::vector<double>& query) {
  Posterior post;
  post.probs.resize(database.entries.size());
  double total = 0;
  for (size_t i = 0; i < database.entries.size(); ++i) {
    const double p = kde_pdf(model, database.entries[i].id, query) * database.prior[i];
    post.probs[i] = p;
    total += p;
  }
  if (total < kKdeUnderflowFloor) {
    post.probs = database.prior;
    post.underflow = true;
    return post;
  }
  for (double& p : post.probs) p /= total;
  return post;
}

inline KdeModel build_image_kde(const ObjectDatabase& database, const EmbeddingNet& net,
                                double sigma = kImageKdeSigma) {
  KdeModel m = make_kde_model(net.out_dim, sigma);
  for (const auto& e : database.entries)
    for (const auto& img : e.images) m.exemplars[e.id].push_back(embed(net, img));
  return m;
}

inline KdeModel build_text_kde(const ObjectDatabase& database, const db::WordVectorTable& table,
                               double sigma = kTextKdeSigma) {
  KdeModel m = make_kde_model(table.dim, sigma);
  for (const auto& e : database.entries)
    for (const auto& p : e.phrases) m.exemplars[e.id].push_back(db::phrase_embedding(p, table).vec);
  return m;
}

// ---------------------------------------------------------------------------
// Retrieval evaluation

struct LabeledPatch {
  std::string label;
  ImagePatch patch;
};

/// N-way retrieval: a query object (5 images) is matched against N candidate
/// objects (5 images each, one of them the query object with disjoint images)
/// by minimum pairwise embedding distance. Ties are broken uniformly at
/// random, so a constant net scores at chance 1/N.
inline double nway_retrieval_eval(const EmbeddingNet& net, const std::vector<LabeledPatch>& pool,
                                  int nway, int trials, uint64_t seed) {
  std::map<std::string, std::vector<size_t>> by_label;
  for (size_t i = 0; i < pool.size(); ++i) by_label[pool[i].label].push_back(i);
  std::vector<std::string> labels;
  for (const auto& [label, idxs] : by_label)
    if (idxs.size() >= 10) labels.push_back(label);
  if (static_cast<int>(labels.size()) < nway)
    throw std::runtime_error("nway_retrieval_eval: need >= " + std::to_string(nway) +
                             " labels with >= 10 patches each");

  std::vector<std::vector<double>> embeddings(pool.size());
  for (size_t i = 0; i < pool.size(); ++i) embeddings[i] = embed(net, pool[i].patch);

  std::mt19937_64 rng(seed);
  int correct = 0;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<std::string> chosen = labels;
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(nway);
    const std::string& query_label = chosen[0];

    std::vector<size_t> q_idx = by_label[query_label];
    std::shuffle(q_idx.begin(), q_idx.end(), rng);
    std::vector<size_t> query(q_idx.begin(), q_idx.begin() + 5);
    std::vector<size_t> query_cand(q_idx.begin() + 5, q_idx.begin() + 10);

    double best = std::numeric_limits<double>::infinity();
    std::vector<int> best_cands;
    for (int c = 0; c < nway; ++c) {
      std::vector<size_t> cand;
      if (chosen[c] == query_label) {
        cand = query_cand;
      } else {
        std::vector<size_t> all = by_label[chosen[c]];
        std::shuffle(all.begin(), all.end(), rng);
        cand.assign(all.begin(), all.begin() + 5);
      }
      double d = std::numeric_limits<double>::infinity();
      for (size_t qi : query)
        for (size_t ci : cand) d = std::min(d, l2sq(embeddings[qi], embeddings[ci]));
      if (d < best) {
        best = d;
        best_cands = {c};
      } else if (d == best) {
        best_cands.push_back(c);
      }
    }
    const int pick = best_cands[std::uniform_int_distribution<size_t>(0, best_cands.size() - 1)(rng)];
    if (chosen[pick] == query_label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(trials);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline nlohmann::json net_to_json(const EmbeddingNet& net, uint64_t seed = 0,
                                  const nlohmann::json& config = nlohmann::json::object()) {
  return {{"arch", {{"in", net.in_dim}, {"hidden", net.hidden_dim}, {"out", net.out_dim}}},
          {"w1", net.w1}, {"b1", net.b1}, {"w2", net.w2}, {"b2", net.b2},
          {"seed", seed}, {"config", config}};
}

inline EmbeddingNet net_from_json(const nlohmann::json& j) {
  EmbeddingNet net;
  net.in_dim = j.at("arch").at("in").get<int>();
  net.hidden_dim = j.at("arch").at("hidden").get<int>();
  net.out_dim = j.at("arch").at("out").get<int>();
  net.w1 = j.at("w1").get<std::vector<double>>();
  net.b1 = j.at("b1").get<std::vector<double>>();
  net.w2 = j.at("w2").get<std::vector<double>>();
  net.b2 = j.at("b2").get<std::vector<double>>();
  if (net.w1.size() != static_cast<size_t>(net.hidden_dim) * net.in_dim ||
      net.w2.size() != static_cast<size_t>(net.out_dim) * net.hidden_dim ||
      net.b1.size() != static_cast<size_t>(net.hidden_dim) ||
      net.b2.size() != static_cast<size_t>(net.out_dim))
    throw std::runtime_error("net checkpoint: array sizes do not match arch");
  for (size_t i = 0; i < net.param_count(); ++i)
    if (!std::isfinite(*const_cast<EmbeddingNet&>(net).param(i)))
      throw std::runtime_error("net checkpoint: non-finite parameter");
  return net;
}

inline void save_net(const EmbeddingNet& net, const std::string& path, uint64_t seed = 0,
                     const nlohmann::json& config = nlohmann::json::object()) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("net checkpoint: cannot write '" + path + "'");
  out << net_to_json(net, seed, config).dump(2) << "\n";
}

inline EmbeddingNet load_net(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("net checkpoint: cannot open '" + path + "'");
  nlohmann::json j;
  in >> j;
  return net_from_json(j);
}

}  // namespace groundnav::metric
