#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "chg2cap/checkpoint.hpp"
#include "chg2cap/error.hpp"
#include "chg2cap/features.hpp"
#include "chg2cap/gradcheck_suite.hpp"
#include "chg2cap/metrics.hpp"
#include "chg2cap/optim.hpp"
#include "chg2cap/trainer.hpp"

namespace py = pybind11;
using namespace chg2cap;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

FeaturePair to_pair(const Array& f1, const Array& f2) {
  FeaturePair fp{to_tensor(f1), to_tensor(f2)};
  fp.validate();
  return fp;
}

TrainConfig config_from(const py::object& cfg) {
  return cfg.is_none() ? TrainConfig{} : train_config_from_json(from_py(cfg));
}

py::list sentences(const std::vector<Sentence>& s) {
  py::list out;
  for (const auto& x : s) out.append(py::cast(x));
  return out;
}

py::dict log_dict(const std::vector<EpochLog>& log) {
  py::list rows;
  for (const auto& e : log)
    rows.append(py::dict(py::arg("epoch") = e.epoch, py::arg("lr") = e.lr, py::arg("train_loss") = e.train_loss,
                         py::arg("val_bleu4") = e.val_bleu4));
  py::dict d;
  d["log"] = rows;
  return d;
}

}  // namespace

PYBIND11_MODULE(_chg2cap, m) {
  m.doc() = "Bitemporal change captioning core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

  m.def("tokenize", [](const std::string& s) { return tokenize(s); });

  py::class_<Vocabulary>(m, "Vocabulary")
      .def_static("build", &Vocabulary::build, py::arg("captions"), py::arg("min_freq") = 1)
      .def_static("load", &Vocabulary::load)
      .def("save", &Vocabulary::save)
      .def("id", &Vocabulary::id)
      .def("word", &Vocabulary::word)
      .def("__len__", &Vocabulary::size)
      .def("__contains__", &Vocabulary::contains)
      .def_property_readonly("words", &Vocabulary::id_to_word);

  py::class_<DatasetRecord>(m, "Record")
      .def_readonly("id", &DatasetRecord::id)
      .def_readonly("captions", &DatasetRecord::captions)
      .def_property_readonly("split", [](const DatasetRecord& r) { return std::string(to_string(r.split)); })
      .def_property_readonly("change",
                             [](const DatasetRecord& r) -> py::object {
                               if (!r.change) return py::none();
                               return py::str(std::string(to_string(*r.change)));
                             })
      .def_property_readonly("f1", [](const DatasetRecord& r) { return to_array(r.features.f1); })
      .def_property_readonly("f2", [](const DatasetRecord& r) { return to_array(r.features.f2); });

  m.def(
      "gen_synthetic",
      [](std::uint64_t seed, std::size_t count, std::size_t captions, double val_fraction, double test_fraction,
         std::size_t height, std::size_t width, std::size_t channels) {
        SyntheticConfig sc;
        sc.captions_per_record = captions;
        sc.val_fraction = val_fraction;
        sc.test_fraction = test_fraction;
        sc.height = height;
        sc.width = width;
        sc.channels = channels;
        return gen_synthetic(seed, count, sc);
      },
      py::arg("seed"), py::arg("count"), py::arg("captions_per_record") = 5, py::arg("val_fraction") = 0.0,
      py::arg("test_fraction") = 0.0, py::arg("height") = 4, py::arg("width") = 4, py::arg("channels") = 16);
  m.def("write_dataset", &write_dataset, py::arg("directory"), py::arg("records"));
  m.def("load_manifest", &load_manifest);
  m.def("build_vocab", &build_vocab, py::arg("records"), py::arg("min_freq") = 1);

  m.def(
      "default_config", [](bool toy) {
        TrainConfig cfg;
        if (toy) cfg.model = ModelConfig::toy();
        return to_py(to_json(cfg));
      },
      py::arg("toy") = true);
  m.def(
      "lr_at_epoch", [](std::size_t epoch, const py::object& cfg) { return lr_at_epoch(epoch, config_from(cfg)); },
      py::arg("epoch"), py::arg("config") = py::none());

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_static("load", &load_checkpoint)
      .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(p, c); })
      .def("to_bytes", [](const Checkpoint& c) { return py::bytes(encode_checkpoint(c)); })
      .def_static("from_bytes", [](const py::bytes& b) { return decode_checkpoint(std::string(b)); })
      .def_readonly("epoch", &Checkpoint::epoch)
      .def_readonly("best_bleu4", &Checkpoint::best_bleu4)
      .def_readonly("vocab", &Checkpoint::vocab)
      .def_property_readonly("config", [](const Checkpoint& c) { return to_py(to_json(c.config)); })
      .def_property_readonly("parameter_count",
                             [](const Checkpoint& c) { return parameter_count(c.model.named_parameters()); })
      .def(
          "caption",
          [](const Checkpoint& c, const Array& f1, const Array& f2) {
            const auto r = caption(c.model, c.vocab, to_pair(f1, f2));
            return py::make_tuple(r.words, r.attention);
          },
          py::arg("f1"), py::arg("f2"), "Greedy caption and per-token cross-attention maps")
      .def(
          "evaluate",
          [](const Checkpoint& c, const std::vector<DatasetRecord>& records, const std::string& split) {
            const auto subset = select_split(records, parse_split(split));
            if (subset.empty()) throw DataError("split '" + split + "' has no records");
            return to_py(to_json(evaluate(c.model, c.vocab, subset)));
          },
          py::arg("records"), py::arg("split") = "test");

  m.def(
      "train",
      [](const std::vector<DatasetRecord>& records, const py::object& config, const Vocabulary* vocab,
         bool verbose) {
        const TrainConfig cfg = config_from(config);
        const Vocabulary v = vocab ? *vocab : build_vocab(records, cfg.min_freq);
        std::ostringstream sink;
        TrainResult result;
        {
          py::gil_scoped_release release;
          result = train(records, v, cfg, verbose ? &sink : nullptr);
        }
        if (verbose) py::print(sink.str(), py::arg("end") = "");
        return py::make_tuple(result.best, result.final, log_dict(result.log)["log"]);
      },
      py::arg("records"), py::arg("config") = py::none(), py::arg("vocab") = nullptr, py::arg("verbose") = false,
      "Returns (best checkpoint, final checkpoint, per-epoch log)");

  m.def("bleu", &bleu, py::arg("candidates"), py::arg("references"), py::arg("max_order") = 4);
  m.def("rouge_l", &rouge_l);
  m.def("cider_d", &cider_d);
  m.def("meteor_x", &meteor_x);
  m.def("evaluate_corpus", [](const std::vector<Sentence>& cands, const ReferenceSets& refs) {
    return to_py(to_json(evaluate_corpus(cands, refs)));
  });

  m.def(
      "gradcheck",
      [](const std::string& module, std::size_t max_entries, std::uint64_t seed) {
        py::list out;
        for (const auto& r : run_gradcheck_suite(module, max_entries, seed))
          out.append(py::dict(py::arg("name") = r.name, py::arg("max_rel_error") = r.result.max_rel_error,
                              py::arg("probed") = r.result.probed, py::arg("restepped") = r.result.restepped,
                              py::arg("skipped") = r.result.skipped, py::arg("seconds") = r.seconds));
        return out;
      },
      py::arg("module") = "ops", py::arg("max_entries_per_tensor") = 0, py::arg("seed") = 0);
}
