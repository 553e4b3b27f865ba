// Command-line frontend: dataset generation, training, corpus alignment,
// grounding, rollouts, and experiment evaluation. Every subcommand is
// deterministic given --seed and its config file.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "groundnav/groundnav.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace groundnav;

namespace {

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  json j;
  in >> j;
  if (!j.is_object()) throw std::runtime_error("config '" + path + "' must be a JSON object");
  return j;
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

eval::PipelineConfig pipeline_config_from(const json& cfg) {
  eval::PipelineConfig p;
  p.proposal_jitter = cfg.value("proposal_jitter", p.proposal_jitter);
  p.false_positives = cfg.value("false_positives", p.false_positives);
  p.layout_objects = cfg.value("layout_objects", p.layout_objects);
  return p;
}

eval::PipelineContext context_from(const json& cfg, uint64_t seed) {
  eval::PipelineContext ctx = eval::make_pipeline_context(
      seed, cfg.value("pool_size", 24), cfg.value("held_out", 8), cfg.value("train_frames", 120),
      cfg.value("eval_frames", 30), cfg.value("embed_epochs", 6));
  if (cfg.contains("net")) ctx.net = metric::load_net(cfg.at("net").get<std::string>());
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot object grounding, mapping, and instruction following toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  uint64_t seed = 1;
  std::string config_path;
  std::string out_dir = "out";
  app.add_option("--seed", seed, "Master random seed")->capture_default_str();
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--out", out_dir, "Output directory")->capture_default_str();

  // -------------------------------------------------------------- gen-data
  auto* gen = app.add_subcommand(
      "gen-data", "Render an annotated dataset, exemplar database, lexicon, and corpus");
  gen->callback([&] {
    const json cfg = load_config(config_path);
    fs::create_directories(out_dir);
    const auto pool = sim::make_object_pool(cfg.value("pool_size", 12), seed);
    const sim::ArDataset ds = sim::gen_ar_dataset(pool, cfg.value("frames", 24), seed);
    sim::save_dataset(ds, out_dir + "/dataset");
    db::save_database(sim::build_database(pool, ds.patches), out_dir + "/database.json");
    const lang::Lexicon lex = lang::builtin_lexicon();
    lang::save_lexicon(lex, out_dir + "/lexicon.txt");
    db::save_word_vectors(eval::default_word_table(), out_dir + "/wordvecs.txt");
    const align::SyntheticCorpus corpus =
        align::make_synthetic_corpus(cfg.value("corpus_examples", 120), seed ^ 0xc0ffeeULL, lex);
    align::save_corpus(corpus.examples, out_dir + "/corpus.jsonl");
    std::cout << "wrote dataset (" << ds.frames.size() << " frames, " << ds.patches.size()
              << " patches), database, lexicon, word vectors, corpus to " << out_dir << "\n";
  });

  // -------------------------------------------------------- train-embedder
  auto* te = app.add_subcommand("train-embedder",
                                "Fit the patch embedding net on a generated dataset");
  te->callback([&] {
    const json cfg = load_config(config_path);
    const std::string ds_dir = cfg.value("dataset", out_dir + "/dataset");
    std::vector<metric::LabeledPatch> patches;
    std::vector<metric::TripletSpec> triplets;
    sim::load_patches_triplets(ds_dir, &patches, &triplets);
    std::vector<db::ImagePatch> pool;
    pool.reserve(patches.size());
    for (const auto& p : patches) pool.push_back(p.patch);
    metric::TrainConfig tc;
    tc.epochs = cfg.value("epochs", 3);
    tc.learning_rate = cfg.value("learning_rate", 0.003);
    tc.hidden_dim = cfg.value("hidden", 32);
    tc.seed = seed;
    const metric::TrainResult res = metric::train_embedder(pool, triplets, tc);
    fs::create_directories(out_dir);
    metric::save_net(res.net, out_dir + "/net.json", seed,
                     json{{"epochs", tc.epochs}, {"learning_rate", tc.learning_rate}});
    write_json(json{{"epoch_mean_loss", res.epoch_mean_loss}}, out_dir + "/embedder_log.json");
    std::cout << "trained embedder on " << pool.size() << " patches, " << triplets.size()
              << " triplets -> " << out_dir << "/net.json\n";
  });

  // ---------------------------------------------------------- train-objref
  auto* to = app.add_subcommand("train-objref",
                                "Fit the object-reference chunk classifier on labeled chunks");
  to->callback([&] {
    const json cfg = load_config(config_path);
    const std::string chunk_path = cfg.value("chunks", out_dir + "/chunks.jsonl");
    const std::vector<lang::LabeledChunk> data = lang::load_labeled_chunks(chunk_path);
    const db::WordVectorTable words = eval::default_word_table();
    lang::ObjRefTrainConfig oc;
    oc.epochs = cfg.value("epochs", 300);
    oc.learning_rate = cfg.value("learning_rate", 0.05);
    oc.hidden_dim = cfg.value("hidden", 16);
    oc.seed = seed;
    const lang::ObjRefTrainResult res = lang::train_objref(data, words, oc);
    fs::create_directories(out_dir);
    lang::save_objref(res.clf, out_dir + "/objref.json");
    write_json(json{{"epoch_loss", res.epoch_loss},
                    {"degenerate", res.degenerate},
                    {"train_accuracy", lang::objref_accuracy(res.clf, data, words)}},
               out_dir + "/objref_log.json");
    std::cout << "trained reference classifier on " << data.size() << " chunks -> " << out_dir
              << "/objref.json\n";
  });

  // ---------------------------------------------------------- align-corpus
  auto* ac = app.add_subcommand(
      "align-corpus", "EM-align instruction chunks to nearby objects and extract labeled chunks");
  ac->callback([&] {
    const json cfg = load_config(config_path);
    const std::string corpus_path = cfg.value("corpus", out_dir + "/corpus.jsonl");
    const std::vector<align::AlignedExample> corpus = align::load_corpus(corpus_path);
    const lang::Lexicon lex = cfg.contains("lexicon")
                                  ? lang::load_lexicon(cfg.at("lexicon").get<std::string>())
                                  : lang::builtin_lexicon();
    const align::EmResult res = align::em_train(corpus, lex, cfg.value("iterations", 15));
    fs::create_directories(out_dir);
    align::save_model(res.model, out_dir + "/alignment_model.json");
    lang::save_labeled_chunks(align::extract_reference_dataset(corpus, res.model, lex),
                              out_dir + "/chunks.jsonl");
    write_json(json{{"log_likelihood", res.log_likelihood}}, out_dir + "/likelihood.json");
    std::cout << "aligned " << corpus.size() << " examples in " << res.log_likelihood.size() - 1
              << " iterations -> " << out_dir << "\n";
  });

  // ----------------------------------------------------------------- ground
  auto* gr = app.add_subcommand(
      "ground", "Ground a scripted instruction in a seeded scene and snapshot the context map");
  gr->callback([&] {
    const json cfg = load_config(config_path);
    const eval::PipelineContext ctx = context_from(cfg, seed);
    const eval::GroundingPass g = eval::run_grounding(ctx, seed, pipeline_config_from(cfg));
    fs::create_directories(out_dir);

    json trace;
    trace["instruction"] = g.instruction;
    trace["anonymized"] = g.refset.u_hat;
    trace["target"] = {{"id", g.layout.objects[static_cast<size_t>(g.target_index)].type.id},
                       {"x", g.layout.objects[static_cast<size_t>(g.target_index)].x},
                       {"y", g.layout.objects[static_cast<size_t>(g.target_index)].y}};
    trace["layout"] = sim::layout_to_json(g.layout);
    trace["start"] = {{"x", g.start.x}, {"y", g.start.y}, {"yaw", g.start.yaw}};
    if (g.aligned) {
      std::vector<ground::MaskSummary> summaries;
      summaries.reserve(g.ref_segs.size());
      for (const auto& m : g.ref_segs) summaries.push_back(ground::summarize_mask(m));
      trace["grounding"] = ground::trace_record(g.proposals, g.table, summaries);
    }
    write_json(trace, out_dir + "/trace.json");
    geo::save_map_snapshot(g.cmap, g.obs, out_dir + "/map", 0);
    std::cout << "grounded \"" << g.instruction << "\" -> " << out_dir
              << "/trace.json, map.json, map.bin\n";
  });

  // ---------------------------------------------------------------- rollout
  auto* ro = app.add_subcommand("rollout",
                                "Run one controller episode and dump its trace as JSONL");
  ro->callback([&] {
    const json cfg = load_config(config_path);
    const std::string mode = cfg.value("mode", "oracle");
    eval::EpisodeRecord rec;
    if (mode == "oracle") {
      rec = eval::run_oracle_episode(seed);
    } else if (mode == "pipeline") {
      rec = eval::run_pipeline_episode(context_from(cfg, seed), seed, pipeline_config_from(cfg));
    } else {
      throw std::runtime_error("rollout: mode must be 'oracle' or 'pipeline'");
    }
    fs::create_directories(out_dir);
    eval::write_rollout_jsonl(rec.trace, out_dir + "/rollout.jsonl");
    write_json(eval::episode_result_to_json(rec.result), out_dir + "/episode.json");
    std::cout << "rollout (" << mode << "): " << rec.result.steps << " steps, stop distance "
              << rec.result.stop_distance << " m -> " << out_dir << "/rollout.jsonl\n";
  });

  // ------------------------------------------------------------------- eval
  auto* ev = app.add_subcommand("eval", "Run a seeded experiment and write results + summary");
  ev->callback([&] {
    json cfg = load_config(config_path);
    if (!cfg.contains("seed")) cfg["seed"] = seed;
    const eval::ExperimentConfig ec = eval::experiment_config_from_json(cfg);
    const eval::ExperimentSummary sum = eval::run_experiment(ec, out_dir);
    std::cout << "evaluated " << sum.episodes << " episodes (" << ec.predictor
              << "): SR=" << sum.success_rate << " mean EMD=" << sum.mean_emd << " m -> "
              << out_dir << "\n";
  });

  // ----------------------------------------------------------------- report
  auto* rp = app.add_subcommand("report", "Summarize an experiment directory as markdown");
  rp->callback([&] {
    const json cfg = load_config(config_path);
    const std::string exp_dir = cfg.value("experiment", out_dir);
    fs::create_directories(out_dir);
    eval::write_report(exp_dir, out_dir + "/report.md");
    std::cout << "wrote " << out_dir << "/report.md\n";
    if (cfg.contains("map")) {
      const geo::MapSnapshot snap = geo::load_map_snapshot(cfg.at("map").get<std::string>());
      eval::write_map_svg(snap, out_dir + "/map.svg");
      std::cout << "wrote " << out_dir << "/map.svg\n";
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
