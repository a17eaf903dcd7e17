// mixrag command-line tool.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mixrag/config.hpp"
#include "mixrag/dataset.hpp"
#include "mixrag/errors.hpp"
#include "mixrag/eval.hpp"
#include "mixrag/model.hpp"
#include "mixrag/training.hpp"

namespace fs = std::filesystem;
using namespace mixrag;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kDegraded = 3 };

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t k = 20;
  std::size_t layers = 3;
  bool k_set = false;
  bool layers_set = false;
};

Config load_config(const Globals& g) {
  Config c = g.config_path.empty() ? Config{} : Config::load(g.config_path);
  if (g.k_set || !c.contains("retrieval.k")) c.set("retrieval.k", std::to_string(g.k));
  if (g.layers_set || !c.contains("model.layers")) c.set("model.layers", std::to_string(g.layers));
  return c;
}

std::unique_ptr<GenerationBackend> make_backend(const std::string& kind, const Config& c, const Model& model) {
  if (kind == "mock") return std::make_unique<MockBackend>(model.config.prompt_vectors, model.config.prompt_dim);
  if (kind == "http") {
    auto hc = http_config_from(c);
    if (hc.endpoint.empty()) throw ParameterError("http backend needs llm.endpoint in the config");
    return std::make_unique<HttpBackend>(hc);
  }
  throw ParameterError("unknown backend '" + kind + "' (mock or http)");
}

// Checkpoint model, with --k applied on top.
Model load_model(const std::string& path, const Globals& g) {
  Model m = load_checkpoint(path);
  if (g.k_set) m.config.k = g.k;
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::vector<std::size_t> parse_depths(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
  if (out.empty()) throw ParameterError("--sweep needs a list such as 1,2,3,4");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-of-experts retrieval over textual graphs"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "global seed");
  auto* k_opt = app.add_option("--k", g.k, "retrieval k")->check(CLI::PositiveNumber);
  auto* layers_opt = app.add_option("--layers", g.layers, "encoder layers")->check(CLI::Range(1, 8));

  // convert
  auto* convert = app.add_subcommand("convert", "TSV edge list to graph JSON");
  std::string tsv_in, graph_out;
  convert->add_option("input", tsv_in, "TSV file")->required()->check(CLI::ExistingFile);
  convert->add_option("output", graph_out, "graph JSON")->required();

  // embed
  auto* embed = app.add_subcommand("embed", "hash-embed a graph");
  std::string embed_graph_in, embed_out;
  std::string embed_kind = "all";
  embed->add_option("graph", embed_graph_in, "graph JSON")->required()->check(CLI::ExistingFile);
  embed->add_option("output", embed_out, "embedding file")->required();
  embed->add_option("--kind", embed_kind, "all, node, relation or triple");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  std::string synth_out;
  synth->add_option("out", synth_out, "output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train on a corpus");
  std::string graphs_dir, corpus_path, checkpoint_out, init_checkpoint, sweep, sweep_dataset;
  train_cmd->add_option("--graphs", graphs_dir, "graph directory")->required();
  train_cmd->add_option("--corpus", corpus_path, "training JSON lines")->required();
  train_cmd->add_option("--out", checkpoint_out, "checkpoint to write")->required();
  train_cmd->add_option("--init", init_checkpoint, "start from a checkpoint");
  train_cmd->add_option("--sweep", sweep, "also train and evaluate these depths, e.g. 1,2,3,4");
  train_cmd->add_option("--dataset", sweep_dataset, "evaluation set for --sweep");

  // eval and ablate share their options
  std::string eval_graphs, eval_dataset, eval_checkpoint, eval_out, backend_kind = "mock";
  std::size_t workers = 0;
  std::string experts;
  auto add_eval_options = [&](CLI::App* cmd) {
    cmd->add_option("--graphs", eval_graphs, "graph directory")->required();
    cmd->add_option("--dataset", eval_dataset, "evaluation JSON lines")->required();
    cmd->add_option("--checkpoint", eval_checkpoint, "trained checkpoint")->required();
    cmd->add_option("--out", eval_out, "report directory")->required();
    cmd->add_option("--backend", backend_kind, "mock or http");
    cmd->add_option("--workers", workers, "parallel workers");
  };
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_eval_options(eval_cmd);
  eval_cmd->add_option("--experts", experts, "active experts, e.g. entity+relation");
  auto* ablate = app.add_subcommand("ablate", "evaluate every expert combination");
  add_eval_options(ablate);

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and numeric gradients");
  std::string gc_graphs, gc_corpus, gc_checkpoint, gc_objective = "surrogate";
  std::size_t gc_index = 0;
  gradcheck->add_option("--graphs", gc_graphs, "graph directory (default: a small synthetic instance)");
  gradcheck->add_option("--corpus", gc_corpus, "training JSON lines");
  gradcheck->add_option("--checkpoint", gc_checkpoint, "checkpoint to check");
  gradcheck->add_option("--index", gc_index, "example index");
  gradcheck->add_option("--objective", gc_objective, "surrogate or soft_norm");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  g.k_set = k_opt->count() > 0;
  g.layers_set = layers_opt->count() > 0;

  try {
    const Config cfg = load_config(g);

    if (*convert) {
      LoadStats stats;
      auto graph = convert_tsv(tsv_in, &stats);
      save_graph(graph, graph_out);
      std::printf("%zu entities, %zu relations, %zu triples (%zu duplicates dropped)\n", graph.num_entities(),
                  graph.num_relations(), graph.num_triples(), stats.duplicates_removed);
      return kOk;
    }

    if (*embed) {
      const auto mc = model_config_from(cfg);
      auto graph = load_graph(embed_graph_in);
      HashEmbedder embedder(mc.dim, mc.embed_seed);
      auto table = embed_graph(embedder, graph);
      if (embed_kind == "all") {
        save_embeddings(table, embed_out);
      } else if (embed_kind == "node") {
        save_embeddings(table, EmbeddingKind::node, embed_out);
      } else if (embed_kind == "relation") {
        save_embeddings(table, EmbeddingKind::relation, embed_out);
      } else if (embed_kind == "triple") {
        save_embeddings(table, EmbeddingKind::triple, embed_out);
      } else {
        throw ParameterError("--kind must be all, node, relation or triple");
      }
      return kOk;
    }

    if (*synth) {
      auto spec = synthetic_spec_from(cfg);
      spec.seed = g.seed;
      auto corpus = generate_synthetic(spec);
      const fs::path out = synth_out;
      fs::create_directories(out / "graphs");
      for (const auto& [id, graph] : corpus.graphs) save_graph(graph, out / "graphs" / (id + ".json"));
      save_train_corpus(corpus.train, out / "train.jsonl");
      save_eval_set(corpus.eval, out / "eval.jsonl");
      save_train_corpus(corpus.eval_gold, out / "eval_gold.jsonl");
      std::printf("%zu graphs, %zu training queries, %zu held-out queries\n", corpus.graphs.size(),
                  corpus.train.size(), corpus.eval.size());
      return kOk;
    }

    if (*train_cmd) {
      auto mc = model_config_from(cfg);
      Model model = init_checkpoint.empty() ? Model::init(mc, g.seed) : load_model(init_checkpoint, g);
      auto tc = train_config_from(cfg);
      tc.seed = g.seed;
      tc.checkpoint = checkpoint_out;
      HashEmbedder embedder(model.config.dim, model.config.embed_seed);
      auto graphs = GraphStore::load_directory(graphs_dir, embedder);
      auto corpus = load_train_corpus(corpus_path);
      auto report = train(tc, corpus, graphs, model);
      for (std::size_t e = 0; e < report.loss_curve.size(); ++e) {
        std::printf("epoch %zu loss %.6f\n", e + 1, report.loss_curve[e]);
      }
      std::printf("final tau %.6f, %zu steps, checkpoint %s\n", report.final_tau, report.steps, checkpoint_out.c_str());
      if (!sweep.empty()) {
        if (sweep_dataset.empty()) throw ParameterError("--sweep needs --dataset");
        auto dataset = load_eval_set(sweep_dataset);
        auto ec = eval_config_from(cfg);
        ec.seed = g.seed;
        MockBackend backend(mc.prompt_vectors, mc.prompt_dim);
        const auto depths = parse_depths(sweep);
        for (const auto& p : layer_sweep(mc, g.seed, tc, ec, corpus, dataset, graphs, backend, depths)) {
          std::printf("layers %zu %s %.4f\n", p.layers, std::string(metric_name(ec.metric)).c_str(), p.metric);
        }
      }
      return kOk;
    }

    if (*eval_cmd || *ablate) {
      Model model = load_model(eval_checkpoint, g);
      HashEmbedder embedder(model.config.dim, model.config.embed_seed);
      auto graphs = GraphStore::load_directory(eval_graphs, embedder);
      auto dataset = load_eval_set(eval_dataset);
      auto ec = eval_config_from(cfg);
      ec.seed = g.seed;
      if (workers > 0) ec.workers = workers;
      auto backend = make_backend(backend_kind, cfg, model);
      json snapshot = {{"seed", g.seed}, {"model", config_to_json(model.config)}, {"backend", backend_kind}};

      if (*eval_cmd) {
        if (!experts.empty()) ec.active = ExpertSet::parse(experts);
        auto report = run_eval(ec, dataset, graphs, model, *backend);
        write_report(report, snapshot, eval_out);
        std::printf("%zu examples: accuracy %.4f hit@1 %.4f failures %zu%s\n", report.records.size(), report.accuracy,
                    report.hit_at_1, report.backend_failures, report.degraded ? " (degraded)" : "");
        return report.degraded ? kDegraded : kOk;
      }

      const auto combos = ExpertSet::non_empty_subsets();
      auto rows = run_ablation(ec, dataset, graphs, model, *backend, combos);
      bool degraded = false;
      for (const auto& row : rows) {
        auto name = row.combo.to_string();
        write_report(row.report, snapshot, fs::path(eval_out) / name);
        degraded = degraded || row.report.degraded;
      }
      const auto table = ablation_table(rows);
      write_text(fs::path(eval_out) / "ablation.csv", table);
      std::fputs(table.c_str(), stdout);
      return degraded ? kDegraded : kOk;
    }

    if (*gradcheck) {
      GradCheckOptions opts;
      if (gc_objective == "surrogate") {
        opts.objective = CheckObjective::surrogate;
      } else if (gc_objective == "soft_norm") {
        opts.objective = CheckObjective::soft_norm;
      } else {
        throw ParameterError("--objective must be surrogate or soft_norm");
      }
      Model model;
      GraphStore graphs;
      std::vector<TrainExample> corpus;
      if (gc_graphs.empty()) {
        // Small self-contained instance.
        ModelConfig mc = model_config_from(cfg);
        mc.dim = 8;
        mc.hidden_dim = 4;
        mc.prompt_dim = 3;
        mc.projector_hidden = 4;
        model = gc_checkpoint.empty() ? Model::init(mc, g.seed) : load_model(gc_checkpoint, g);
        SyntheticSpec spec;
        spec.num_graphs = 1;
        spec.nodes_per_graph = 5;
        spec.num_queries = 4;
        spec.holdout_fraction = 0.0;
        spec.seed = g.seed;
        auto syn = generate_synthetic(spec);
        graphs = build_store(syn, HashEmbedder(model.config.dim, model.config.embed_seed));
        corpus = syn.train;
      } else {
        if (gc_corpus.empty()) throw ParameterError("--graphs needs --corpus");
        model = gc_checkpoint.empty() ? Model::init(model_config_from(cfg), g.seed) : load_model(gc_checkpoint, g);
        graphs = GraphStore::load_directory(gc_graphs, HashEmbedder(model.config.dim, model.config.embed_seed));
        corpus = load_train_corpus(gc_corpus);
      }
      if (gc_index >= corpus.size()) throw ParameterError("--index outside the corpus");
      model.selector.tau = 1.0;
      const auto& ex = corpus[gc_index];
      auto report = grad_check(model, ex, graphs.at(ex.graph), opts);
      for (const auto& p : report.parameters) {
        std::printf("%-36s max rel err %.3e  max |grad| %.3e\n", p.name.c_str(), p.max_relative_error,
                    p.max_abs_analytic);
      }
      const double worst = report.max_relative_error();
      std::printf("worst %.3e %s\n", worst, worst <= 1e-4 ? "ok" : "FAILED");
      return worst <= 1e-4 ? kOk : kData;
    }
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const ParameterError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
