#include "mixrag/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "mixrag/errors.hpp"

namespace mixrag {

using nlohmann::json;

std::string normalize_answer(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

double compute_accuracy(std::span<const std::string> predictions, std::span<const std::string> golds) {
  if (predictions.size() != golds.size()) {
    throw ContractError("compute_accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                        std::to_string(golds.size()) + " golds");
  }
  if (predictions.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    hits += normalize_answer(predictions[i]) == normalize_answer(golds[i]) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

bool compute_hit_at_1(std::string_view prediction, std::span<const std::string> answers) {
  const auto p = normalize_answer(prediction);
  return std::any_of(answers.begin(), answers.end(), [&](const std::string& a) { return normalize_answer(a) == p; });
}

std::string_view metric_name(Metric m) { return m == Metric::accuracy ? "accuracy" : "hit@1"; }

Metric parse_metric(std::string_view name) {
  if (name == "accuracy" || name == "acc") return Metric::accuracy;
  if (name == "hit@1" || name == "hit_at_1" || name == "hits@1") return Metric::hit_at_1;
  throw ParameterError("unknown metric '" + std::string(name) + "'");
}

void recompute_aggregates(EvalReport& report, double degraded_threshold) {
  const std::size_t n = report.records.size();
  std::size_t correct = 0, hits = 0, failures = 0;
  for (const auto& r : report.records) {
    correct += r.correct ? 1 : 0;
    hits += r.hit ? 1 : 0;
    failures += r.error ? 1 : 0;
  }
  report.accuracy = n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  report.hit_at_1 = n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
  report.backend_failures = failures;
  report.degraded = static_cast<double>(failures) > degraded_threshold * static_cast<double>(n);
}

EvalReport run_eval(const EvalConfig& config, const std::vector<EvalExample>& dataset, const GraphStore& graphs,
                    const Model& model, const GenerationBackend& backend) {
  if (dataset.empty()) throw ParameterError("run_eval: dataset is empty");
  if (config.active.empty()) throw ParameterError("run_eval: active expert set is empty");
  for (const auto& e : dataset) {
    if (!graphs.contains(e.graph)) {
      throw ReferentialIntegrityError("example '" + e.id + "' refers to unknown graph '" + e.graph + "'");
    }
    if (e.answers.empty()) throw FormatError("example '" + e.id + "' has no answers");
  }

  const HashEmbedder embedder(model.config.dim, model.config.embed_seed);
  EvalReport report;
  report.metric = config.metric;
  report.active = config.active.to_string();
  report.records.resize(dataset.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto work = [&]() {
    NoGradGuard no_grad;
    for (std::size_t i = next.fetch_add(1); i < dataset.size(); i = next.fetch_add(1)) {
      try {
        const auto& ex = dataset[i];
        auto& rec = report.records[i];
        rec.id = ex.id;
        rec.question = ex.question;
        rec.answers = ex.answers;
        rec.query_class = ex.query_class;

        const auto& data = graphs.at(ex.graph);
        Rng rng(mix_seed(config.seed, ex.id));
        ForwardOptions fo;
        fo.active = config.active;
        fo.noise = config.noise;
        fo.rng = &rng;
        const Tensor query = embedder.embed(ex.question);
        auto result = forward(model, query, data, fo);
        for (auto id : kAllExperts) rec.gate[static_cast<std::size_t>(id)] = result.gate.of(id);
        auto bundle = build_prompt(model, data.graph, result, ex.question);
        try {
          rec.prediction = backend.generate(bundle).text;
        } catch (const BackendError& e) {
          rec.error = e.what();
        }
        rec.correct = !rec.error && normalize_answer(rec.prediction) == normalize_answer(ex.answers.front());
        rec.hit = !rec.error && compute_hit_at_1(rec.prediction, ex.answers);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(dataset.size());
      }
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(config.workers, dataset.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  recompute_aggregates(report, config.degraded_threshold);
  return report;
}

std::vector<AblationRow> run_ablation(const EvalConfig& config, const std::vector<EvalExample>& dataset,
                                      const GraphStore& graphs, const Model& model, const GenerationBackend& backend,
                                      std::span<const ExpertSet> combos) {
  if (combos.empty()) throw ParameterError("run_ablation: no expert combinations given");
  std::vector<AblationRow> rows;
  for (auto combo : combos) {
    if (combo.empty()) throw ParameterError("run_ablation: empty expert combination");
    EvalConfig c = config;
    c.active = combo;
    rows.push_back({combo, run_eval(c, dataset, graphs, model, backend)});
  }
  return rows;
}

json record_to_json(const EvalRecord& r) {
  json j = {
      {"id", r.id},
      {"question", r.question},
      {"prediction", r.prediction},
      {"answers", r.answers},
      {"correct", r.correct},
      {"hit", r.hit},
      {"gate", {{"entity", r.gate[0]}, {"relation", r.gate[1]}, {"subgraph", r.gate[2]}}},
  };
  if (r.query_class) j["query_class"] = *r.query_class == QueryClass::simple ? "simple" : "complex";
  if (r.error) j["error"] = *r.error;
  return j;
}

json summary_to_json(const EvalReport& report) {
  return {
      {"examples", report.records.size()},
      {"accuracy", report.accuracy},
      {"hit@1", report.hit_at_1},
      {"metric", metric_name(report.metric)},
      {"headline", report.headline()},
      {"backend_failures", report.backend_failures},
      {"degraded", report.degraded},
      {"experts", report.active},
  };
}

std::string gate_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "id,query_class,entity,relation,subgraph\n";
  char buf[128];
  for (const auto& r : report.records) {
    const char* cls = !r.query_class ? "" : *r.query_class == QueryClass::simple ? "simple" : "complex";
    std::snprintf(buf, sizeof buf, ",%s,%.17g,%.17g,%.17g\n", cls, r.gate[0], r.gate[1], r.gate[2]);
    out << r.id << buf;
  }
  return out.str();
}

std::string gate_by_class_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "query_class,count,entity,relation,subgraph\n";
  auto row = [&](const char* name, auto pred) {
    std::array<double, kNumExperts> sum{};
    std::size_t n = 0;
    for (const auto& r : report.records) {
      if (!pred(r)) continue;
      ++n;
      for (std::size_t i = 0; i < kNumExperts; ++i) sum[i] += r.gate[i];
    }
    if (n == 0) return;
    char buf[160];
    const double dn = static_cast<double>(n);
    std::snprintf(buf, sizeof buf, "%s,%zu,%.6f,%.6f,%.6f\n", name, n, sum[0] / dn, sum[1] / dn, sum[2] / dn);
    out << buf;
  };
  row("simple", [](const EvalRecord& r) { return r.query_class == QueryClass::simple; });
  row("complex", [](const EvalRecord& r) { return r.query_class == QueryClass::complex; });
  row("all", [](const EvalRecord&) { return true; });
  return out.str();
}

void write_report(const EvalReport& report, const json& config_snapshot, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.jsonl");
    if (!out) throw DataError("cannot write " + (dir / "report.jsonl").string());
    for (const auto& r : report.records) out << record_to_json(r).dump() << '\n';
  }
  {
    auto summary = summary_to_json(report);
    summary["config"] = config_snapshot;
    std::ofstream out(dir / "summary.json");
    out << summary.dump(2) << '\n';
  }
  std::ofstream(dir / "gate_weights.csv") << gate_csv(report);
  std::ofstream(dir / "gate_by_class.csv") << gate_by_class_csv(report);
}

std::string ablation_table(std::span<const AblationRow> rows) {
  std::ostringstream out;
  out << "experts,accuracy,hit@1,failures\n";
  char buf[96];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, ",%.4f,%.4f,%zu\n", row.report.accuracy, row.report.hit_at_1,
                  row.report.backend_failures);
    out << row.combo.to_string() << buf;
  }
  return out.str();
}

void SyntheticSpec::validate() const {
  if (num_graphs == 0 || nodes_per_graph == 0 || branching == 0 || num_queries == 0) {
    throw ParameterError("synthetic spec: all counts must be positive");
  }
  if (!(one_hop_fraction >= 0.0 && one_hop_fraction <= 1.0)) {
    throw ParameterError("synthetic spec: one_hop_fraction must be in [0, 1]");
  }
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw ParameterError("synthetic spec: holdout_fraction must be in [0, 1)");
  }
}

namespace {

constexpr std::array<std::string_view, 12> kRelations = {"mentor", "rival",  "founder", "owner",  "neighbor", "author",
                                                         "student", "partner", "heir",   "patron", "guardian", "successor"};
constexpr std::array<std::string_view, 24> kSyllables = {"ka", "lo", "mi", "ra", "ven", "to", "sa", "dor",
                                                         "el", "vi", "nu", "qua", "zen", "bri", "mo", "ta",
                                                         "fi", "gor", "lu", "xa", "pe", "rin", "so", "dal"};

std::string make_name(Rng& rng, std::set<std::string>& used) {
  for (;;) {
    std::string name;
    const std::size_t parts = 2 + rng.below(2);
    for (std::size_t i = 0; i < parts; ++i) name += kSyllables[rng.below(kSyllables.size())];
    name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
    if (used.insert(name).second) return name;
  }
}

// Names are drawn from one vocabulary shared by all graphs, so a name seen in
// one graph recurs in others.
std::vector<std::string> make_vocabulary(std::size_t size, Rng& rng) {
  std::set<std::string> used;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < size; ++i) out.push_back(make_name(rng, used));
  return out;
}

struct Tree {
  TextualGraph graph;
  std::vector<std::string> names;
  std::vector<std::optional<std::size_t>> parent;
  std::vector<RelationId> relation;  // relation from parent, per child
};

Tree make_tree(const SyntheticSpec& spec, const std::vector<std::string>& vocabulary, Rng& rng) {
  const std::size_t n = spec.nodes_per_graph;
  const std::size_t max_children = std::min(spec.branching, kRelations.size());
  Tree t;
  std::vector<std::size_t> pool(vocabulary.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  for (std::size_t i = 0; i < n; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  std::vector<std::vector<bool>> rel_used(n, std::vector<bool>(kRelations.size(), false));
  std::vector<std::size_t> children(n, 0);
  t.parent.assign(n, std::nullopt);
  t.relation.assign(n, 0);
  std::vector<Entity> entities;
  std::vector<Triple> triples;
  for (std::size_t i = 0; i < n; ++i) {
    t.names.push_back(vocabulary[pool[i]]);
    if (i == 0) {
      entities.push_back({0, t.names[0]});
      continue;
    }
    std::vector<std::size_t> open;
    for (std::size_t p = 0; p < i; ++p) {
      if (children[p] < max_children) open.push_back(p);
    }
    const std::size_t p = open[rng.below(open.size())];
    std::vector<RelationId> free;
    for (RelationId r = 0; r < kRelations.size(); ++r) {
      if (!rel_used[p][r]) free.push_back(r);
    }
    const RelationId r = free[rng.below(free.size())];
    rel_used[p][r] = true;
    ++children[p];
    t.parent[i] = p;
    t.relation[i] = r;
    entities.push_back({i, t.names[i] + " (" + std::string(kRelations[r]) + " of " + t.names[p] + ")"});
    triples.push_back({p, r, i, std::nullopt});
  }
  std::vector<RelationType> relations;
  for (RelationId r = 0; r < kRelations.size(); ++r) relations.push_back({r, std::string(kRelations[r])});
  t.graph = TextualGraph(std::move(entities), std::move(relations), std::move(triples));
  return t;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, "synthetic"));
  SyntheticCorpus out;
  const auto vocabulary = make_vocabulary(3 * spec.nodes_per_graph, rng);
  std::vector<Tree> trees;
  char id[32];
  for (std::size_t g = 0; g < spec.num_graphs; ++g) {
    std::snprintf(id, sizeof id, "g%04zu", g);
    trees.push_back(make_tree(spec, vocabulary, rng));
    out.graphs.emplace_back(id, trees.back().graph);
  }

  struct Candidate {
    std::size_t graph;
    std::size_t node;
  };
  std::vector<Candidate> one_hop, two_hop;
  for (std::size_t g = 0; g < trees.size(); ++g) {
    for (std::size_t v = 1; v < spec.nodes_per_graph; ++v) {
      one_hop.push_back({g, v});
      if (trees[g].parent[*trees[g].parent[v]]) two_hop.push_back({g, v});
    }
  }
  shuffle(one_hop, rng);
  shuffle(two_hop, rng);

  std::size_t want_one = static_cast<std::size_t>(std::llround(spec.one_hop_fraction * double(spec.num_queries)));
  std::size_t want_two = spec.num_queries - want_one;
  want_one = std::min(want_one, one_hop.size());
  want_two = std::min(want_two, two_hop.size());

  struct Query {
    TrainExample train;
    EvalExample eval;
  };
  std::vector<Query> queries;
  auto add_query = [&](const Candidate& c, bool multi) {
    const auto& t = trees[c.graph];
    const std::size_t v = c.node;
    const std::size_t p = *t.parent[v];
    Query q;
    q.train.graph = out.graphs[c.graph].first;
    q.train.gold_entities = {v};
    q.train.gold_triples = {v - 1};
    if (!multi) {
      q.train.query = "What is the " + std::string(kRelations[t.relation[v]]) + " of " + t.names[p] + "?";
      q.train.best_expert = ExpertId::entity;
      q.eval.query_class = QueryClass::simple;
    } else {
      const std::size_t gp = *t.parent[p];
      q.train.query = "What is the " + std::string(kRelations[t.relation[v]]) + " of the " +
                      std::string(kRelations[t.relation[p]]) + " of " + t.names[gp] + "?";
      q.train.gold_triples = {p - 1, v - 1};
      q.train.best_expert = ExpertId::relation;
      q.eval.query_class = QueryClass::complex;
    }
    q.eval.question = q.train.query;
    q.eval.graph = q.train.graph;
    q.eval.answers = {t.graph.entity(v).text};
    queries.push_back(std::move(q));
  };
  for (std::size_t i = 0; i < want_one; ++i) add_query(one_hop[i], false);
  for (std::size_t i = 0; i < want_two; ++i) add_query(two_hop[i], true);
  shuffle(queries, rng);

  const auto holdout = static_cast<std::size_t>(std::floor(spec.holdout_fraction * double(queries.size())));
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::snprintf(id, sizeof id, "q%05zu", i);
    queries[i].eval.id = id;
    if (i < holdout) {
      out.eval.push_back(queries[i].eval);
      out.eval_gold.push_back(queries[i].train);
    } else {
      out.train.push_back(queries[i].train);
    }
  }
  return out;
}

GraphStore build_store(const SyntheticCorpus& corpus, const HashEmbedder& embedder) {
  GraphStore store;
  for (const auto& [id, graph] : corpus.graphs) store.add(id, graph, embedder);
  return store;
}

std::vector<SweepPoint> layer_sweep(const ModelConfig& model_config, std::uint64_t model_seed,
                                    const TrainConfig& train_config, const EvalConfig& eval_config,
                                    const std::vector<TrainExample>& corpus, const std::vector<EvalExample>& dataset,
                                    const GraphStore& graphs, const GenerationBackend& backend,
                                    std::span<const std::size_t> depths) {
  std::vector<SweepPoint> out;
  for (auto depth : depths) {
    ModelConfig mc = model_config;
    mc.layers = depth;
    Model model = Model::init(mc, model_seed);
    TrainConfig tc = train_config;
    tc.checkpoint.reset();
    SweepPoint point;
    point.layers = depth;
    point.training = train(tc, corpus, graphs, model);
    point.metric = run_eval(eval_config, dataset, graphs, model, backend).headline();
    out.push_back(std::move(point));
  }
  return out;
}

ModelConfig model_config_from(const Config& c) {
  ModelConfig m;
  m.dim = c.get_size("model.dim", m.dim);
  m.embed_seed = c.get_u64("model.embed_seed", m.embed_seed);
  m.hidden_dim = c.get_size("model.hidden_dim", m.hidden_dim);
  m.layers = c.get_size("model.layers", m.layers);
  m.prompt_dim = c.get_size("model.prompt_dim", m.prompt_dim);
  m.prompt_vectors = c.get_size("model.prompt_vectors", m.prompt_vectors);
  m.projector_hidden = c.get_size("model.projector_hidden", m.projector_hidden);
  m.init_scale = c.get_double("model.init_scale", m.init_scale);
  m.scorer_identity_offset = c.get_bool("model.scorer_identity_offset", m.scorer_identity_offset);
  m.dynamic_keys = c.get_bool("gate.dynamic_keys", m.dynamic_keys);
  m.k = c.get_size("retrieval.k", m.k);
  m.edge_cost = c.get_double("pcst.edge_cost", m.edge_cost);
  const auto rule = c.get_string("pcst.prize_rule", "linear_rank");
  if (rule == "linear_rank") {
    m.prize_rule = PrizeRule::linear_rank;
  } else if (rule == "similarity") {
    m.prize_rule = PrizeRule::similarity;
  } else {
    throw ParameterError("pcst.prize_rule: unknown rule '" + rule + "'");
  }
  if (c.contains("pcst.hop_radius")) m.hop_radius = c.get_size("pcst.hop_radius", 0);
  m.tau0 = c.get_double("selector.tau0", m.tau0);
  m.anneal_rate = c.get_double("selector.anneal_rate", m.anneal_rate);
  m.tau_min = c.get_double("selector.tau_min", m.tau_min);
  m.hard_selection = c.get_bool("selector.hard", m.hard_selection);
  m.task_instruction = c.get_string("prompt.task_instruction", m.task_instruction);
  m.evidence_budget = c.get_size("prompt.evidence_budget", m.evidence_budget);
  m.validate();
  return m;
}

TrainConfig train_config_from(const Config& c) {
  TrainConfig t;
  t.epochs = c.get_size("train.epochs", t.epochs);
  t.learning_rate = c.get_double("train.learning_rate", t.learning_rate);
  t.batch_size = c.get_size("train.batch_size", t.batch_size);
  t.tau0 = c.get_double("selector.tau0", t.tau0);
  t.anneal_rate = c.get_double("selector.anneal_rate", t.anneal_rate);
  t.tau_min = c.get_double("selector.tau_min", t.tau_min);
  t.lambda.entity = c.get_double("train.lambda_entity", t.lambda.entity);
  t.lambda.relation = c.get_double("train.lambda_relation", t.lambda.relation);
  t.lambda.gate = c.get_double("train.lambda_gate", t.lambda.gate);
  t.noise = c.get_bool("train.noise", t.noise);
  t.validate();
  return t;
}

EvalConfig eval_config_from(const Config& c) {
  EvalConfig e;
  e.workers = c.get_size("eval.workers", e.workers);
  e.metric = parse_metric(c.get_string("metric", c.get_string("eval.metric", "accuracy")));
  e.noise = c.get_bool("eval.noise", e.noise);
  e.active = ExpertSet::parse(c.get_string("eval.experts", "all"));
  e.degraded_threshold = c.get_double("eval.degraded_threshold", e.degraded_threshold);
  return e;
}

SyntheticSpec synthetic_spec_from(const Config& c) {
  SyntheticSpec s;
  s.num_graphs = c.get_size("synth.graphs", s.num_graphs);
  s.nodes_per_graph = c.get_size("synth.nodes", s.nodes_per_graph);
  s.branching = c.get_size("synth.branching", s.branching);
  s.num_queries = c.get_size("synth.queries", s.num_queries);
  s.one_hop_fraction = c.get_double("synth.one_hop_fraction", s.one_hop_fraction);
  s.holdout_fraction = c.get_double("synth.holdout", s.holdout_fraction);
  s.validate();
  return s;
}

HttpBackendConfig http_config_from(const Config& c) {
  HttpBackendConfig h;
  h.endpoint = c.get_string("llm.endpoint", "");
  h.model = c.get_string("llm.model", h.model);
  h.timeout = std::chrono::milliseconds(c.get_size("llm.timeout_ms", 30000));
  return h;
}

}  // namespace mixrag
