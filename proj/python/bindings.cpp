#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "charadial/cli/cli.hpp"
#include "charadial/corpus/annotate.hpp"
#include "charadial/corpus/datasets.hpp"
#include "charadial/corpus/generator.hpp"
#include "charadial/corpus/stats.hpp"
#include "charadial/eval/metrics.hpp"

namespace py = pybind11;
using namespace charadial;

namespace {

// Json crosses the boundary as text; the Python side parses it.
py::object to_python(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }
Json from_python(const py::object& o) {
  return Json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

template <typename E>
void translate(const char* name, py::module_& m, PyObject* base) {
  static py::exception<E> exc(m, name, base);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const E& e) {
      PyErr_SetString(exc.ptr(), e.what());
    }
  });
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Character-aware story dialogue toolkit";
  m.attr("__version__") = "0.1.0";

  translate<DataError>("DataError", m, PyExc_ValueError);
  translate<ConfigError>("ConfigError", m, PyExc_ValueError);

  m.def("tokenize", &corpus::tokenize, py::arg("text"));

  m.def(
      "generate_corpus",
      [](const py::dict& config) {
        auto c = corpus::GeneratorConfig::from_json(from_python(config));
        c.validate();
        auto g = corpus::generate_synthetic_corpus(c);
        py::list stories;
        for (const auto& s : g.stories) stories.append(to_python(corpus::to_json(s)));
        py::dict out;
        out["stories"] = stories;
        out["lexicon"] = to_python(g.lexicon.to_json());
        out["vocab"] = to_python(g.vocab.to_json());
        out["stats"] = to_python(corpus::compute_stats(g.stories, g.vocab).to_json());
        return out;
      },
      py::arg("config") = py::dict(), "Generates a synthetic corpus from a generator config dict.");

  m.def(
      "attribute",
      [](const py::dict& story, const py::dict& lexicon, const py::dict& vocab) {
        auto s = corpus::story_from_json(from_python(story));
        auto lex = corpus::CharacterLexicon::from_json(from_python(lexicon));
        auto v = corpus::Vocabulary::from_json(from_python(vocab));
        return to_python(corpus::to_json(corpus::annotate_story(s, lex, v)));
      },
      py::arg("story"), py::arg("lexicon"), py::arg("vocab"), "Re-annotates one story.");

  m.def(
      "bleu",
      [](const std::vector<std::vector<corpus::TokenId>>& candidates,
         const std::vector<std::vector<corpus::TokenId>>& references, std::size_t n) {
        return eval::corpus_bleu(candidates, references, n).value();
      },
      py::arg("candidates"), py::arg("references"), py::arg("n"), "Macro-averaged sentence BLEU-n in [0, 1].");

  m.def(
      "distinct",
      [](const std::vector<std::vector<corpus::TokenId>>& turns, std::size_t n) {
        return eval::distinct_n(turns, n).value();
      },
      py::arg("turns"), py::arg("n"));

  m.def(
      "dac_sac",
      [](const std::vector<std::vector<std::size_t>>& predicted, const std::vector<std::vector<std::size_t>>& gold) {
        if (predicted.size() != gold.size()) throw DataError("predicted and gold story counts differ");
        std::vector<eval::StoryPrediction> stories;
        for (std::size_t i = 0; i < gold.size(); ++i) stories.push_back({std::to_string(i), predicted[i], gold[i]});
        auto t = eval::dac_sac(stories);
        return std::make_pair(t.dac(), t.sac());
      },
      py::arg("predicted"), py::arg("gold"), "Percent of turns and of whole stories predicted correctly.");

  m.def(
      "run_cli", [](const std::vector<std::string>& args) { return cli::run(args); }, py::arg("args"),
      py::call_guard<py::gil_scoped_release>(), "Runs a CLI subcommand in-process and returns its exit code.");
}
