// Python bindings for the core library.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "mixrag/config.hpp"
#include "mixrag/dataset.hpp"
#include "mixrag/errors.hpp"
#include "mixrag/eval.hpp"
#include "mixrag/graph.hpp"
#include "mixrag/model.hpp"
#include "mixrag/rng.hpp"
#include "mixrag/subgraph_expert.hpp"
#include "mixrag/training.hpp"

namespace py = pybind11;
using namespace mixrag;

namespace {

// Flat key = value settings, the same keys the config file uses.
Config config_from(const py::dict& settings) {
  Config c;
  for (const auto& [k, v] : settings) {
    std::string value;
    if (py::isinstance<py::bool_>(v)) {
      value = v.cast<bool>() ? "true" : "false";
    } else {
      value = py::str(v).cast<std::string>();
    }
    c.set(k.cast<std::string>(), value);
  }
  return c;
}

// nlohmann json to Python via the json module; reports are small.
py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

TextualGraph make_graph(const std::vector<std::string>& entities, const std::vector<std::string>& relations,
                        const std::vector<std::tuple<std::size_t, std::size_t, std::size_t>>& triples) {
  std::vector<Entity> ents;
  for (std::size_t i = 0; i < entities.size(); ++i) ents.push_back({i, entities[i]});
  std::vector<RelationType> rels;
  for (std::size_t i = 0; i < relations.size(); ++i) rels.push_back({i, relations[i]});
  std::vector<Triple> trs;
  for (const auto& [h, r, t] : triples) trs.push_back({h, r, t, std::nullopt});
  return TextualGraph(std::move(ents), std::move(rels), std::move(trs));
}

struct Corpus {
  SyntheticCorpus data;
  GraphStore store;
};

}  // namespace

PYBIND11_MODULE(_mixrag, m) {
  m.doc() = "Mixture of retrieval experts over textual graphs";

  auto base = py::register_exception<Error>(m, "MixragError");
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<ParameterError>(m, "ParameterError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());

  m.def("normalize_answer", &normalize_answer);
  m.def("compute_accuracy", [](const std::vector<std::string>& p, const std::vector<std::string>& g) {
    return compute_accuracy(p, g);
  });
  m.def("compute_hit_at_1", [](const std::string& p, const std::vector<std::string>& a) {
    return compute_hit_at_1(p, a);
  });
  m.def("gumbel_from_uniform", &gumbel_from_uniform);

  py::class_<HashEmbedder>(m, "HashEmbedder")
      .def(py::init<std::size_t, std::uint64_t>(), py::arg("dim") = 256, py::arg("seed") = 7)
      .def_property_readonly("dim", &HashEmbedder::dim)
      .def("embed", [](const HashEmbedder& e, const std::string& text) { return e.embed_values(text); });

  py::class_<TextualGraph>(m, "TextualGraph")
      .def(py::init(&make_graph), py::arg("entities"), py::arg("relations"), py::arg("triples"))
      .def_property_readonly("num_entities", &TextualGraph::num_entities)
      .def_property_readonly("num_relations", &TextualGraph::num_relations)
      .def_property_readonly("num_triples", &TextualGraph::num_triples)
      .def("entity_text", [](const TextualGraph& g, EntityId v) { return g.entity(v).text; })
      .def("triple", [](const TextualGraph& g, TripleId t) {
        const auto& tr = g.triple(t);
        return std::make_tuple(tr.head, tr.relation, tr.tail);
      })
      .def("triple_text", &TextualGraph::triple_text)
      .def("to_json", [](const TextualGraph& g) { return to_python(graph_to_json(g)); });

  m.def("load_graph", [](const std::filesystem::path& p) { return load_graph(p); });
  m.def("save_graph", &save_graph);
  m.def("convert_tsv", [](const std::filesystem::path& p) { return convert_tsv(p); });

  m.def(
      "solve_pcst",
      [](const TextualGraph& g, std::vector<double> node_prizes, std::vector<double> edge_prizes, double cost) {
        PrizeAssignment p{std::move(node_prizes), std::move(edge_prizes), cost};
        auto r = solve_pcst(g, p);
        return py::make_tuple(r.objective, r.subgraph.node_map, r.subgraph.triple_map);
      },
      py::arg("graph"), py::arg("node_prizes"), py::arg("edge_prizes"), py::arg("edge_cost") = 1.0,
      "Returns (objective, entity ids, triple ids).");

  py::class_<Corpus>(m, "SyntheticCorpus")
      .def_property_readonly("num_graphs", [](const Corpus& c) { return c.data.graphs.size(); })
      .def_property_readonly("num_train", [](const Corpus& c) { return c.data.train.size(); })
      .def_property_readonly("num_eval", [](const Corpus& c) { return c.data.eval.size(); })
      .def("questions", [](const Corpus& c) {
        std::vector<std::string> out;
        for (const auto& e : c.data.eval) out.push_back(e.question);
        return out;
      });

  m.def(
      "generate_synthetic",
      [](const py::dict& settings, std::uint64_t seed) {
        const Config c = config_from(settings);
        auto spec = synthetic_spec_from(c);
        spec.seed = seed;
        const auto mc = model_config_from(c);
        Corpus out;
        out.data = generate_synthetic(spec);
        out.store = build_store(out.data, HashEmbedder(mc.dim, mc.embed_seed));
        return out;
      },
      py::arg("settings") = py::dict(), py::arg("seed") = 0,
      "Corpus plus an embedded graph store; settings use the config file keys.");

  py::class_<Model>(m, "Model")
      .def_static(
          "init", [](const py::dict& settings, std::uint64_t seed) { return Model::init(model_config_from(config_from(settings)), seed); },
          py::arg("settings") = py::dict(), py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); })
      .def("save", [](const Model& model, const std::filesystem::path& p) { save_checkpoint(model, p); })
      .def_property_readonly("config", [](const Model& model) { return to_python(config_to_json(model.config)); })
      .def_property_readonly("tau", [](const Model& model) { return model.selector.tau; })
      .def("parameter_names", [](const Model& model) {
        std::vector<std::string> out;
        for (const auto& p : model.parameters()) out.push_back(p.name);
        return out;
      });

  m.def(
      "train",
      [](Model& model, const Corpus& corpus, const py::dict& settings, std::uint64_t seed) {
        auto tc = train_config_from(config_from(settings));
        tc.seed = seed;
        TrainReport r;
        {
          py::gil_scoped_release release;
          r = train(tc, corpus.data.train, corpus.store, model);
        }
        py::dict out;
        out["loss_curve"] = r.loss_curve;
        out["final_tau"] = r.final_tau;
        out["steps"] = r.steps;
        return out;
      },
      py::arg("model"), py::arg("corpus"), py::arg("settings") = py::dict(), py::arg("seed") = 0);

  m.def(
      "evaluate",
      [](const Model& model, const Corpus& corpus, const py::dict& settings, std::uint64_t seed) {
        auto ec = eval_config_from(config_from(settings));
        ec.seed = seed;
        MockBackend backend(model.config.prompt_vectors, model.config.prompt_dim);
        EvalReport r;
        {
          py::gil_scoped_release release;
          r = run_eval(ec, corpus.data.eval, corpus.store, model, backend);
        }
        auto summary = summary_to_json(r);
        nlohmann::json records = nlohmann::json::array();
        for (const auto& rec : r.records) records.push_back(record_to_json(rec));
        summary["records"] = records;
        return to_python(summary);
      },
      py::arg("model"), py::arg("corpus"), py::arg("settings") = py::dict(), py::arg("seed") = 0,
      "Evaluates the held-out queries with the in-process mock backend.");
}
