#include <doctest.h>

#include <fstream>
#include <mutex>
#include <set>

#include <nlohmann/json.hpp>

#include "mixrag/errors.hpp"
#include "mixrag/eval.hpp"
#include "support.hpp"

using namespace mixrag;
using testsupport::TempDir;

namespace {

// Fails every question whose id is listed.
class FlakyBackend final : public GenerationBackend {
 public:
  explicit FlakyBackend(std::set<std::string> failing) : failing_(std::move(failing)) {}
  BackendCapabilities capabilities() const override { return {true}; }
  Answer generate(const PromptBundle& bundle) const override {
    if (failing_.count(bundle.query)) throw TransportError("stub outage", 503);
    return MockBackend().generate(bundle);
  }

 private:
  std::set<std::string> failing_;
};

std::string name_part(const std::string& text) { return text.substr(0, text.find(" (")); }

struct Capital {
  GraphStore store;
  std::vector<EvalExample> dataset;
};

Capital capital_fixture(const ModelConfig& cfg) {
  Capital c;
  TextualGraph g({{0, "France"}, {1, "Paris (capital of France)"}, {2, "Lyon"}, {3, "Rhone"}},
                 {{0, "capital"}, {1, "river"}}, {{0, 0, 1, {}}, {2, 1, 3, {}}});
  c.store.add("fr", g, HashEmbedder(cfg.dim, cfg.embed_seed));
  c.dataset.push_back({"q1", "What is the capital of France?", "fr", {"Paris (capital of France)"}, QueryClass::simple});
  return c;
}

}  // namespace

TEST_CASE("accuracy cases") {
  const std::vector<std::string> gold{"Paris", "Rome", "Oslo", "Bern"};
  CHECK(compute_accuracy(gold, gold) == 1.0);
  const std::vector<std::string> none{"a", "b", "c", "d"};
  CHECK(compute_accuracy(none, gold) == 0.0);
  const std::vector<std::string> three{" paris", "ROME ", "oslo", "Zurich"};
  CHECK(compute_accuracy(three, gold) == 0.75);
  const std::vector<std::string> short_list{"Paris"};
  CHECK_THROWS_AS(compute_accuracy(short_list, gold), ContractError);
}

TEST_CASE("hit at 1 cases") {
  const std::vector<std::string> paris_lutetia{"Paris", "Lutetia"};
  const std::vector<std::string> paris{"Paris"};
  CHECK(compute_hit_at_1("Paris", paris_lutetia));
  CHECK(compute_hit_at_1("paris ", paris));
  CHECK_FALSE(compute_hit_at_1("London", paris));
  CHECK(compute_hit_at_1("  new   york ", std::vector<std::string>{"New York"}));
}

TEST_CASE("answer normalization") {
  CHECK(normalize_answer("  The\tCut  Peony \n") == "the cut peony");
  CHECK(normalize_answer("") == "");
  CHECK(parse_metric("hit@1") == Metric::hit_at_1);
  CHECK(parse_metric("accuracy") == Metric::accuracy);
  CHECK_THROWS_AS(parse_metric("f1"), ParameterError);
}

TEST_CASE("synthetic generator on a tiny corpus is deterministic") {
  SyntheticSpec spec;
  spec.num_graphs = 1;
  spec.nodes_per_graph = 5;
  spec.num_queries = 4;
  auto a = generate_synthetic(spec);
  REQUIRE(a.graphs.size() == 1);
  CHECK(a.graphs[0].second.num_entities() == 5);
  CHECK(a.train.size() + a.eval.size() >= 1);

  auto b = generate_synthetic(spec);
  CHECK(a.graphs[0].second == b.graphs[0].second);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(to_json(a.train[i]) == to_json(b.train[i]));
  for (std::size_t i = 0; i < a.eval.size(); ++i) CHECK(to_json(a.eval[i]) == to_json(b.eval[i]));

  spec.nodes_per_graph = 0;
  CHECK_THROWS_AS(generate_synthetic(spec), ParameterError);
}

TEST_CASE("synthetic gold answers are reachable from the mentioned entity") {
  SyntheticSpec spec;
  spec.num_graphs = 6;
  spec.num_queries = 60;
  spec.one_hop_fraction = 0.5;
  spec.seed = 3;
  auto corpus = generate_synthetic(spec);
  std::map<std::string, const TextualGraph*> graphs;
  for (const auto& [id, g] : corpus.graphs) graphs[id] = &g;

  auto all = corpus.train;
  all.insert(all.end(), corpus.eval_gold.begin(), corpus.eval_gold.end());
  std::size_t one = 0, two = 0;
  for (const auto& ex : all) {
    const auto& g = *graphs.at(ex.graph);
    const auto of = ex.query.rfind(" of ");
    const std::string mentioned = ex.query.substr(of + 4, ex.query.size() - of - 5);
    const EntityId gold = ex.gold_entities.at(0);
    // Entities within the expected hop count of the gold answer.
    std::set<EntityId> frontier{gold};
    const std::size_t hops = ex.best_expert == ExpertId::entity ? 1 : 2;
    for (std::size_t h = 0; h < hops; ++h) {
      std::set<EntityId> next;
      for (auto v : frontier)
        for (const auto& inc : g.neighbors(v)) next.insert(inc.other);
      frontier = next;
    }
    const bool found = std::any_of(frontier.begin(), frontier.end(),
                                   [&](EntityId v) { return name_part(g.entity(v).text) == mentioned; });
    CHECK_MESSAGE(found, ex.query);
    (hops == 1 ? one : two)++;
    const auto& rel_text = g.relation(g.triple(ex.gold_triples.back()).relation).text;
    CHECK(ex.query.find("What is the " + rel_text + " of ") == 0);
  }
  CHECK(one == 30);
  CHECK(two == 30);
}

TEST_CASE("dataset files round-trip and report bad lines") {
  TempDir dir("data");
  SyntheticSpec spec;
  spec.num_graphs = 2;
  spec.num_queries = 10;
  auto corpus = generate_synthetic(spec);
  save_train_corpus(corpus.train, dir / "train.jsonl");
  save_eval_set(corpus.eval, dir / "eval.jsonl");
  auto train = load_train_corpus(dir / "train.jsonl");
  auto eval = load_eval_set(dir / "eval.jsonl");
  REQUIRE(train.size() == corpus.train.size());
  CHECK(to_json(train[0]) == to_json(corpus.train[0]));
  CHECK(to_json(eval[0]) == to_json(corpus.eval[0]));

  std::ofstream(dir / "bad.jsonl") << to_json(corpus.eval[0]).dump() << "\n{\"id\": \"x\", \"question\": \"q\"}\n";
  try {
    load_eval_set(dir / "bad.jsonl");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("bad.jsonl:2") != std::string::npos);
  }
  std::ofstream(dir / "empty.jsonl") << "{\"id\":\"a\",\"question\":\"q\",\"graph\":\"g\",\"answers\":[]}\n";
  CHECK_THROWS_AS(load_eval_set(dir / "empty.jsonl"), FormatError);
}

TEST_CASE("graph store directory round-trip") {
  TempDir dir("store");
  auto cfg = testsupport::tiny_config();
  auto toy = testsupport::make_toy(cfg, 2, 6, 4);
  toy.store.save_directory(dir.path(), true);
  auto back = GraphStore::load_directory(dir.path(), HashEmbedder(cfg.dim, cfg.embed_seed));
  CHECK(back.size() == 2);
  for (const auto& [id, data] : toy.store.all()) {
    CHECK(back.at(id).graph == data.graph);
    CHECK(testsupport::values(back.at(id).table.nodes()) == testsupport::values(data.table.nodes()));
  }
  CHECK_THROWS_AS(back.at("missing"), ReferentialIntegrityError);
}

TEST_CASE("entity-only fixture gets a hit") {
  ModelConfig cfg;
  auto fx = capital_fixture(cfg);
  auto model = Model::init(cfg, 1);
  EvalConfig ec;
  ec.active = ExpertSet::of(ExpertId::entity);
  auto report = run_eval(ec, fx.dataset, fx.store, model, MockBackend(1, cfg.prompt_dim));
  REQUIRE(report.records.size() == 1);
  CHECK(report.records[0].prediction == "Paris (capital of France)");
  CHECK(report.records[0].hit);
  CHECK(report.accuracy == 1.0);
}

TEST_CASE("empty dataset and unknown graph") {
  auto cfg = testsupport::tiny_config();
  auto toy = testsupport::make_toy(cfg);
  auto model = Model::init(cfg, 1);
  CHECK_THROWS_AS(run_eval({}, {}, toy.store, model, MockBackend()), ParameterError);
  std::vector<EvalExample> bad{{"x", "What?", "nope", {"a"}, std::nullopt}};
  CHECK_THROWS_AS(run_eval({}, bad, toy.store, model, MockBackend()), ReferentialIntegrityError);
}

TEST_CASE("report aggregates, gate sums and worker independence") {
  auto cfg = testsupport::tiny_config();
  auto toy = testsupport::make_toy(cfg, 3, 8, 40, 2, 0.5);
  auto model = Model::init(cfg, 2);
  EvalConfig ec;
  ec.noise = true;  // per-example streams must not depend on scheduling
  auto serial = run_eval(ec, toy.corpus.eval, toy.store, model, MockBackend());
  ec.workers = 4;
  auto parallel = run_eval(ec, toy.corpus.eval, toy.store, model, MockBackend());
  CHECK(summary_to_json(serial) == summary_to_json(parallel));
  REQUIRE(serial.records.size() == parallel.records.size());
  for (std::size_t i = 0; i < serial.records.size(); ++i) {
    CHECK(record_to_json(serial.records[i]) == record_to_json(parallel.records[i]));
    double s = 0.0;
    for (double a : serial.records[i].gate) s += a;
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
  auto copy = serial;
  copy.accuracy = copy.hit_at_1 = -1;
  recompute_aggregates(copy);
  CHECK(copy.accuracy == serial.accuracy);
  CHECK(copy.hit_at_1 == serial.hit_at_1);
}

TEST_CASE("backend failures are recorded and mark degraded runs") {
  auto cfg = testsupport::tiny_config();
  auto toy = testsupport::make_toy(cfg, 8, 12, 80);
  auto model = Model::init(cfg, 2);
  const auto& ds = toy.corpus.eval;
  REQUIRE(ds.size() >= 10);
  auto report = run_eval({}, ds, toy.store, model, FlakyBackend({ds[0].question}));
  CHECK(report.backend_failures == 1);
  CHECK(report.records[0].error.has_value());
  CHECK_FALSE(report.records[0].correct);
  CHECK(report.degraded == (1.0 / static_cast<double>(ds.size()) > 0.10));

  std::set<std::string> many;
  for (std::size_t i = 0; i < ds.size() / 5; ++i) many.insert(ds[i].question);
  CHECK(run_eval({}, ds, toy.store, model, FlakyBackend(many)).degraded);
}

TEST_CASE("ablation rows") {
  auto cfg = testsupport::tiny_config();
  auto toy = testsupport::make_toy(cfg, 3, 8, 40, 4, 0.5);
  auto model = Model::init(cfg, 4);
  EvalConfig ec;
  auto combos = ExpertSet::non_empty_subsets();
  auto rows = run_ablation(ec, toy.corpus.eval, toy.store, model, MockBackend(), combos);
  REQUIRE(rows.size() == 7);
  auto full = run_eval(ec, toy.corpus.eval, toy.store, model, MockBackend());
  const auto& all_row = rows.back();
  CHECK(all_row.combo == ExpertSet::all());
  for (std::size_t i = 0; i < full.records.size(); ++i)
    CHECK(record_to_json(all_row.report.records[i]) == record_to_json(full.records[i]));

  for (const auto& r : rows[0].report.records) CHECK(r.gate[0] == 1.0);
  auto table = ablation_table(rows);
  CHECK(table.starts_with("experts,accuracy,hit@1,failures\n"));
  CHECK(std::count(table.begin(), table.end(), '\n') == 8);
}

TEST_CASE("report files") {
  auto cfg = testsupport::tiny_config();
  auto toy = testsupport::make_toy(cfg, 3, 8, 20, 5, 0.5);
  auto model = Model::init(cfg, 5);
  auto report = run_eval({}, toy.corpus.eval, toy.store, model, MockBackend());
  TempDir dir("report");
  write_report(report, nlohmann::json{{"seed", 0}}, dir.path());
  for (const char* f : {"report.jsonl", "summary.json", "gate_weights.csv", "gate_by_class.csv"})
    CHECK(std::filesystem::exists(dir / f));
  std::ifstream in(dir / "report.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    auto rec = nlohmann::json::parse(line);
    CHECK(rec.contains("gate"));
    ++lines;
  }
  CHECK(lines == report.records.size());
  auto by_class = gate_by_class_csv(report);
  CHECK(by_class.find("simple") != std::string::npos);
  CHECK(by_class.find("all") != std::string::npos);
}

TEST_CASE("config parsing") {
  auto c = Config::parse("# comment\nmodel.dim = 32\nretrieval.k=7  # inline\nmetric = hit@1\nselector.hard = true\n");
  CHECK(c.get_size("model.dim", 0) == 32);
  CHECK(model_config_from(c).dim == 32);
  CHECK(model_config_from(c).k == 7);
  CHECK(model_config_from(c).hard_selection);
  CHECK(eval_config_from(c).metric == Metric::hit_at_1);
  CHECK(train_config_from(c).epochs == 30);
  CHECK_THROWS_AS(Config::parse("model.dim = 3x").get_size("model.dim", 0), ParameterError);
  CHECK_THROWS_AS(Config::parse("no equals sign"), FormatError);
  CHECK(Config::parse("a = 1\na = 2").get_string("a", "") == "2");
}
