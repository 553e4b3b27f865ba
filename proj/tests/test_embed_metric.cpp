#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "groundnav/embed_metric.hpp"
#include "oracles.hpp"

using namespace groundnav;

namespace {

db::ImagePatch patch_from(std::vector<float> values, int h, int w, int c) {
  db::ImagePatch p;
  p.h = h;
  p.w = w;
  p.c = c;
  p.data = std::move(values);
  if (p.data.size() != p.count()) throw std::runtime_error("bad test patch");
  return p;
}

/// Net whose output copies the first 4 input values (identity first layer,
/// selector second layer). Valid for nonnegative inputs, where relu is a
/// pass-through.
metric::EmbeddingNet selector_net(int in_dim = 12) {
  metric::EmbeddingNet net;
  net.in_dim = in_dim;
  net.hidden_dim = in_dim;
  net.out_dim = 4;
  net.w1.assign(static_cast<size_t>(in_dim) * in_dim, 0.0);
  for (int i = 0; i < in_dim; ++i) net.w1[static_cast<size_t>(i) * in_dim + i] = 1.0;
  net.b1.assign(in_dim, 0.0);
  net.w2.assign(static_cast<size_t>(4) * in_dim, 0.0);
  for (int i = 0; i < 4; ++i) net.w2[static_cast<size_t>(i) * in_dim + i] = 1.0;
  net.b2.assign(4, 0.0);
  return net;
}

/// 2x2x3 patch whose first four values are given, rest zero.
db::ImagePatch head4(float a, float b, float c, float d) {
  return patch_from({a, b, c, d, 0, 0, 0, 0, 0, 0, 0, 0}, 2, 2, 3);
}

}  // namespace

TEST_CASE("zeroed net embeds every patch to the zero vector") {
  metric::EmbeddingNet net = metric::make_net(12, 6, 4, 99);
  for (auto& v : net.w1) v = 0;
  for (auto& v : net.b1) v = 0;
  for (auto& v : net.w2) v = 0;
  for (auto& v : net.b2) v = 0;
  CHECK(metric::embed(net, head4(0.3f, 0.9f, 0.1f, 0.7f)) == std::vector<double>(4, 0.0));
}

TEST_CASE("selector net copies the leading inputs") {
  const auto out = metric::embed(selector_net(), head4(0.1f, 0.2f, 0.3f, 0.4f));
  CHECK(out[0] == Catch::Approx(0.1).margin(1e-7));
  CHECK(out[3] == Catch::Approx(0.4).margin(1e-7));
  CHECK_THROWS(metric::embed(selector_net(), patch_from({0.0f}, 1, 1, 1)));
}

TEST_CASE("triplet loss evaluates the three hinge terms") {
  const metric::EmbeddingNet net = selector_net();
  metric::TripletBatch b;
  b.anchor = head4(0, 0, 0, 0);

  SECTION("all terms inactive") {
    b.positives = {head4(0, 0, 0, 0)};           // s_a = 0
    b.negatives = {head4(1, 1, 1, 0)};           // s_b = 3
    CHECK(metric::triplet_loss(net, b) == 0.0);
  }
  SECTION("all terms active") {
    b.positives = {head4(1, 1, 1, 0)};           // s_a = 3
    b.negatives = {head4(1, 0, 0, 0)};           // s_b = 1
    // (3-2) + (2-1) + (3-1+1)
    CHECK(metric::triplet_loss(net, b) == Catch::Approx(5.0).margin(1e-6));
  }
  SECTION("only the separation hinge") {
    b.positives = {head4(1, 1, 0, 0)};           // s_a = 2
    b.negatives = {head4(0, 0, 1, 1)};           // s_b = 2
    CHECK(metric::triplet_loss(net, b) == Catch::Approx(1.0).margin(1e-6));
  }
  SECTION("min over the exemplar sets") {
    b.positives = {head4(1, 1, 1, 0), head4(1, 0, 0, 0)};  // s_a = min(3, 1) = 1
    b.negatives = {head4(1, 1, 0, 0)};                     // s_b = 2
    CHECK(metric::triplet_loss(net, b) == 0.0);
  }
  SECTION("validation") {
    b.positives = {};
    b.negatives = {head4(1, 0, 0, 0)};
    CHECK_THROWS(metric::triplet_loss(net, b));
    b.positives = {head4(1, 0, 0, 0)};
    b.margin_near = 3.0;  // must stay below margin_far
    CHECK_THROWS(metric::triplet_loss(net, b));
  }
}

TEST_CASE("analytic triplet gradient matches central finite differences") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    const oracles::GradCheck g = oracles::fd_gradient_check(seed);
    INFO("seed " << seed << " resamples " << g.resamples);
    CHECK(g.max_rel_err < 1e-4);
  }
}

TEST_CASE("training separates constructed classes") {
  // two classes of near-constant patches, 10 exemplars each
  std::vector<db::ImagePatch> pool;
  for (int i = 0; i < 10; ++i)
    pool.push_back(patch_from(std::vector<float>(12, 0.1f + 0.005f * i), 2, 2, 3));
  for (int i = 0; i < 10; ++i)
    pool.push_back(patch_from(std::vector<float>(12, 0.9f - 0.005f * i), 2, 2, 3));

  std::vector<metric::TripletSpec> triplets;
  for (int rep = 0; rep < 10; ++rep)
    for (int a = 0; a < 20; ++a) {
      metric::TripletSpec t;
      t.anchor = a;
      const int base = a < 10 ? 0 : 10, other = a < 10 ? 10 : 0;
      t.positives = {base + (a + rep + 1) % 10};
      t.negatives = {other + (a + rep) % 10};
      triplets.push_back(t);
    }
  REQUIRE(triplets.size() == 200);

  metric::TrainConfig cfg;
  cfg.epochs = 12;
  cfg.hidden_dim = 8;
  cfg.seed = 5;
  const metric::TrainResult res = metric::train_embedder(pool, triplets, cfg);

  const metric::EmbeddingNet init = metric::make_net(12, cfg.hidden_dim, metric::kEmbedDim, cfg.seed);
  const double before = metric::mean_triplet_loss(init, pool, triplets);
  const double after = metric::mean_triplet_loss(res.net, pool, triplets);
  INFO("loss " << before << " -> " << after);
  CHECK(after < 0.1 * before);
}

TEST_CASE("zero epochs and zero learning rate are no-ops") {
  std::vector<db::ImagePatch> pool = {head4(0.1f, 0, 0, 0), head4(0.2f, 0, 0, 0),
                                      head4(0.9f, 0, 0, 0)};
  std::vector<metric::TripletSpec> triplets = {{0, {1}, {2}}};

  metric::TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 3;
  const metric::EmbeddingNet net = metric::train_embedder(pool, triplets, cfg).net;
  const metric::EmbeddingNet init = metric::make_net(12, cfg.hidden_dim, metric::kEmbedDim, 3);
  CHECK(net.w1 == init.w1);
  CHECK(net.w2 == init.w2);

  cfg.epochs = 4;
  cfg.learning_rate = 0.0;
  const metric::TrainResult frozen = metric::train_embedder(pool, triplets, cfg);
  for (double l : frozen.epoch_mean_loss) CHECK(l == frozen.epoch_mean_loss[0]);
}

TEST_CASE("kde pdf matches the closed-form Gaussian") {
  metric::KdeModel m = metric::make_kde_model(2, 2.0);
  m.exemplars["a"] = {{1.0, 1.0}};

  // query on the single exemplar: the normalization constant alone
  CHECK(metric::kde_pdf(m, "a", {1.0, 1.0}) == Catch::Approx(1.0 / (2.0 * M_PI * 4.0)).epsilon(1e-12));

  const std::vector<double> q = {4.0, 1.0};
  CHECK(metric::kde_pdf(m, "a", q) ==
        Catch::Approx(oracles::kde_pdf_closed_form(m.exemplars["a"], q, 2.0)).epsilon(1e-12));

  // far query decays toward zero
  CHECK(metric::kde_pdf(m, "a", {200.0, 1.0}) < 1e-300);

  // two exemplars symmetric about the query collapse to the common term
  m.exemplars["b"] = {{0.0, 0.0}, {2.0, 2.0}};
  const double common = oracles::kde_pdf_closed_form({{0.0, 0.0}}, {1.0, 1.0}, 2.0);
  CHECK(metric::kde_pdf(m, "b", {1.0, 1.0}) == Catch::Approx(common).epsilon(1e-12));

  CHECK_THROWS(metric::kde_pdf(m, "nonesuch", q));
  CHECK_THROWS(metric::make_kde_model(2, 0.0));
}

TEST_CASE("kde posterior normalizes, stays uniform under symmetry, and survives underflow") {
  db::ObjectDatabase d;
  d.entries.push_back({"a", {db::ImagePatch{}}, {{"a"}}});
  d.entries.push_back({"b", {db::ImagePatch{}}, {{"b"}}});
  d.prior = db::uniform_prior(2);

  metric::KdeModel m = metric::make_kde_model(2, 2.0);
  m.exemplars["a"] = {{1.0, 0.0}};
  m.exemplars["b"] = {{-1.0, 0.0}};

  SECTION("equidistant query is exactly uniform") {
    const metric::Posterior p = metric::kde_posterior(m, d, {0.0, 0.0});
    CHECK(p.probs[0] == 0.5);
    CHECK(p.probs[1] == 0.5);
    CHECK_FALSE(p.underflow);
  }
  SECTION("distant query falls back to the prior with a flag") {
    const metric::Posterior p = metric::kde_posterior(m, d, {500.0, 0.0});
    CHECK(p.underflow);
    CHECK(p.probs == d.prior);
  }
  SECTION("single-object database is certain") {
    db::ObjectDatabase solo;
    solo.entries.push_back(d.entries[0]);
    solo.prior = db::uniform_prior(1);
    CHECK(metric::kde_posterior(m, solo, {3.0, 4.0}).probs == std::vector<double>{1.0});
  }
}

TEST_CASE("kde posterior matches brute force on constructed distances") {
  // exemplars at distances 0, 2*sigma, 4*sigma from the query
  db::ObjectDatabase d;
  d.entries.push_back({"near", {db::ImagePatch{}}, {{"x"}}});
  d.entries.push_back({"mid", {db::ImagePatch{}}, {{"x"}}});
  d.entries.push_back({"far", {db::ImagePatch{}}, {{"x"}}});
  d.prior = db::uniform_prior(3);

  metric::KdeModel m = metric::make_kde_model(2, 2.0);
  m.exemplars["near"] = {{0.0, 0.0}};
  m.exemplars["mid"] = {{4.0, 0.0}};
  m.exemplars["far"] = {{8.0, 0.0}};

  const double ka = 1.0, kb = std::exp(-16.0 / 8.0), kc = std::exp(-64.0 / 8.0);
  const double z = ka + kb + kc;
  const metric::Posterior p = metric::kde_posterior(m, d, {0.0, 0.0});
  CHECK(p.probs[0] == Catch::Approx(ka / z).epsilon(1e-12));
  CHECK(p.probs[1] == Catch::Approx(kb / z).epsilon(1e-12));
  CHECK(p.probs[2] == Catch::Approx(kc / z).epsilon(1e-12));
  double sum = 0;
  for (double v : p.probs) sum += v;
  CHECK(std::abs(sum - 1.0) < 1e-9);
}

TEST_CASE("n-way retrieval is perfect for a separating net and chance for a constant one") {
  std::vector<metric::LabeledPatch> pool;
  for (int label = 0; label < 8; ++label)
    for (int i = 0; i < 10; ++i) {
      // distinct constants per label; the selector net keeps them apart
      pool.push_back({"c" + std::to_string(label),
                      patch_from(std::vector<float>(12, 0.05f + 0.1f * label), 2, 2, 3)});
    }

  CHECK(metric::nway_retrieval_eval(selector_net(), pool, 2, 50, 7) == 1.0);
  CHECK(metric::nway_retrieval_eval(selector_net(), pool, 8, 50, 7) == 1.0);

  const metric::EmbeddingNet flat = metric::make_constant_net(12, 4, 4);
  const double acc2 = metric::nway_retrieval_eval(flat, pool, 2, 400, 11);
  CHECK(std::abs(acc2 - 0.5) <= oracles::binomial_3sigma(0.5, 400));
  const double acc8 = metric::nway_retrieval_eval(flat, pool, 8, 400, 11);
  CHECK(std::abs(acc8 - 0.125) <= oracles::binomial_3sigma(0.125, 400));

  std::vector<metric::LabeledPatch> tiny(pool.begin(), pool.begin() + 10);
  CHECK_THROWS(metric::nway_retrieval_eval(selector_net(), tiny, 2, 10, 1));
}

TEST_CASE("embedding distance is symmetric") {
  const metric::EmbeddingNet net = metric::make_net(12, 6, 4, 21);
  const auto a = metric::embed(net, head4(0.2f, 0.4f, 0.6f, 0.8f));
  const auto b = metric::embed(net, head4(0.9f, 0.1f, 0.5f, 0.3f));
  CHECK(l2sq(a, b) == l2sq(b, a));
}

TEST_CASE("net checkpoints round trip exactly") {
  const metric::EmbeddingNet net = metric::make_net(12, 5, 4, 1234);
  metric::save_net(net, "test_net.json", 1234);
  const metric::EmbeddingNet r = metric::load_net("test_net.json");
  CHECK(r.in_dim == net.in_dim);
  CHECK(r.w1 == net.w1);
  CHECK(r.b1 == net.b1);
  CHECK(r.w2 == net.w2);
  CHECK(r.b2 == net.b2);
  std::remove("test_net.json");
}
