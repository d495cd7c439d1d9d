#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ssvg/attribution.hpp"
#include "ssvg/checkpoint.hpp"
#include "ssvg/config.hpp"
#include "ssvg/curation.hpp"
#include "ssvg/evalreport.hpp"
#include "ssvg/geometry.hpp"
#include "ssvg/model.hpp"
#include "ssvg/synthdata.hpp"
#include "ssvg/trainer.hpp"

namespace py = pybind11;
using namespace ssvg;

namespace {

Mat mat_from_rows(const std::vector<std::vector<double>>& rows) {
  Mat m(static_cast<int>(rows.size()), rows.empty() ? 0 : static_cast<int>(rows[0].size()));
  for (int i = 0; i < m.rows; ++i) {
    if (static_cast<int>(rows[static_cast<size_t>(i)].size()) != m.cols)
      throw std::invalid_argument("ragged matrix");
    for (int j = 0; j < m.cols; ++j) m(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
  }
  return m;
}

std::vector<std::vector<double>> mat_to_rows(const Mat& m) {
  std::vector<std::vector<double>> out(static_cast<size_t>(m.rows));
  for (int i = 0; i < m.rows; ++i)
    out[static_cast<size_t>(i)].assign(m.row(i), m.row(i) + m.cols);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "core ops of the ssvg pipeline: geometry, data generation, model, scoring, training";

  py::class_<Box>(m, "Box")
      .def(py::init<double, double, double, double>(), py::arg("cx"), py::arg("cy"), py::arg("w"),
           py::arg("h"))
      .def_readwrite("cx", &Box::cx)
      .def_readwrite("cy", &Box::cy)
      .def_readwrite("w", &Box::w)
      .def_readwrite("h", &Box::h)
      .def("__repr__", [](const Box& b) {
        return "Box(cx=" + std::to_string(b.cx) + ", cy=" + std::to_string(b.cy) +
               ", w=" + std::to_string(b.w) + ", h=" + std::to_string(b.h) + ")";
      });

  py::class_<QuantizedBox>(m, "QuantizedBox")
      .def_readonly("bx", &QuantizedBox::bx)
      .def_readonly("by", &QuantizedBox::by)
      .def_readonly("bw", &QuantizedBox::bw)
      .def_readonly("bh", &QuantizedBox::bh);

  m.def("to_corners", [](const Box& b) {
    const CornerBox c = to_corners(b);
    return py::make_tuple(c.x1, c.y1, c.x2, c.y2);
  });
  m.def("iou", [](std::array<double, 4> a, std::array<double, 4> b) {
    return iou(CornerBox{a[0], a[1], a[2], a[3]}, CornerBox{b[0], b[1], b[2], b[3]});
  });
  m.def("giou", [](std::array<double, 4> a, std::array<double, 4> b) {
    return giou(CornerBox{a[0], a[1], a[2], a[3]}, CornerBox{b[0], b[1], b[2], b[3]});
  });
  m.def("quantize", &quantize, py::arg("box"), py::arg("bins"));
  m.def("dequantize", &dequantize, py::arg("qbox"), py::arg("bins"));
  m.def("l1_loss", &l1_loss);
  m.def("giou_loss", &giou_loss);

  m.def("minmax_normalize", &minmax_normalize);
  m.def("confidence", [](const std::vector<std::vector<double>>& logits, const std::string& mode) {
    return confidence(mat_from_rows(logits),
                      mode == "sum" ? ConfidenceCombine::kSum : ConfidenceCombine::kProduct);
  }, py::arg("logits"), py::arg("mode") = "product");
  m.def("fuse", [](const std::vector<std::tuple<double, double, double>>& triples) {
    std::vector<ScoreTriple> ts;
    for (const auto& [f, r, c] : triples) ts.push_back({f, r, c});
    return fuse(ts);
  });

  py::class_<Sample>(m, "Sample")
      .def_readonly("id", &Sample::id)
      .def_property_readonly("tokens", [](const Sample& s) { return s.query.tokens; })
      .def_property_readonly("gold", [](const Sample& s) -> py::object {
        if (!s.gold) return py::none();
        return py::cast(*s.gold);
      });

  m.def(
      "generate_dataset",
      [](int n, int grid, uint64_t seed) {
        GenSpec spec;
        spec.n = n;
        spec.grid = grid;
        spec.seed = seed;
        return generate_dataset(spec);
      },
      py::arg("n"), py::arg("grid") = 8, py::arg("seed") = 0);
  m.def("save_dataset", [](const std::string& path, const std::vector<Sample>& data, int grid,
                           uint64_t seed) {
    GenSpec spec;
    spec.n = static_cast<int>(data.size());
    spec.grid = grid;
    spec.seed = seed;
    save_dataset(path, data, spec);
  });
  m.def("load_dataset", [](const std::string& path) { return load_dataset(path).samples; });
  m.def("vocab_words", [] { return vocab_words(); });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("label_fraction", &TrainConfig::label_fraction)
      .def_readwrite("test_fraction", &TrainConfig::test_fraction)
      .def_readwrite("n1", &TrainConfig::n1)
      .def_readwrite("n2", &TrainConfig::n2)
      .def_readwrite("k", &TrainConfig::k)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("threads", &TrainConfig::threads);
  m.def("parse_config", &parse_config_text);
  m.def("config_text", &config_to_text);

  // a thin stateful wrapper over params + optimizer for scripting
  struct PyModel {
    ModelParams params;
    OptState opt;
  };
  py::class_<PyModel>(m, "Model")
      .def(py::init([](int grid, int bins, uint64_t seed) {
             ModelConfig cfg;
             cfg.grid = grid;
             cfg.bins = bins;
             PyModel pm{init_params(cfg, seed), {}};
             pm.opt = make_opt_state(pm.params);
             return pm;
           }),
           py::arg("grid") = 8, py::arg("bins") = 32, py::arg("seed") = 0)
      .def("param_count", [](const PyModel& pm) { return param_count(pm.params); })
      .def("predict",
           [](const PyModel& pm, const Sample& s) {
             ForwardResult fw;
             forward(pm.params, s.scene, s.query.tokens, fw);
             py::dict out;
             out["box"] = fw.box;
             out["quant_logits"] = mat_to_rows(fw.quant_logits);
             return out;
           })
      .def("score",
           [](const PyModel& pm, const Sample& s, bool relevance_normalize) {
             ForwardResult fw;
             forward(pm.params, s.scene, s.query.tokens, fw);
             PseudoLabel pl;
             pl.sample_id = s.id;
             pl.box = fw.box;
             pl.qbox = argmax_bins(fw.quant_logits);
             pl.scores.robust = robustness(pl.box, dequantize(pl.qbox, pm.params.cfg.bins));
             pl.scores.conf = confidence(fw.quant_logits);
             grad_of_argmax_sum(pm.params, s.scene, s.query.tokens, fw);
             const auto map = attribution_map(pm.params, fw, {relevance_normalize});
             pl.scores.faith = map.degenerate ? 0.0 : faithfulness(map, pl.box);
             py::dict out;
             out["box"] = pl.box;
             out["faith"] = pl.scores.faith;
             out["robust"] = pl.scores.robust;
             out["conf"] = pl.scores.conf;
             return out;
           },
           py::arg("sample"), py::arg("relevance_normalize") = false)
      .def("attribution",
           [](const PyModel& pm, const Sample& s) {
             ForwardResult fw;
             forward(pm.params, s.scene, s.query.tokens, fw);
             grad_of_argmax_sum(pm.params, s.scene, s.query.tokens, fw);
             return mat_to_rows(attribution_map(pm.params, fw).values);
           })
      .def("burn_in",
           [](PyModel& pm, const std::vector<Sample>& labeled, const TrainConfig& cfg) {
             std::vector<double> losses;
             TrainConfig c = cfg;
             c.model = pm.params.cfg;
             burn_in(pm.params, pm.opt, labeled, c, &losses);
             return losses;
           })
      .def("accuracy",
           [](const PyModel& pm, const std::vector<Sample>& testset) {
             const EvalResult ev = acc_at_05(pm.params, testset);
             return py::make_tuple(ev.acc_reg, ev.acc_quant);
           })
      .def("save", [](const PyModel& pm, const std::string& path) {
        save_checkpoint(path, pm.params, &pm.opt);
      })
      .def_static("load", [](const std::string& path) {
        auto ck = load_checkpoint(path);
        PyModel pm{std::move(ck.params), {}};
        pm.opt = ck.opt ? std::move(*ck.opt) : make_opt_state(pm.params);
        return pm;
      });

  m.def(
      "run_pipeline",
      [](const std::vector<Sample>& data, const TrainConfig& cfg) {
        const RunResult res = run_actress(data, cfg);
        py::list reports;
        for (const auto& r : res.reports) {
          py::dict d;
          d["stage"] = r.stage;
          d["pool_size"] = r.pool_size;
          d["selected"] = r.selected_count;
          d["steps"] = r.steps;
          d["acc_reg"] = r.eval_acc_reg;
          d["acc_quant"] = r.eval_acc_quant;
          reports.append(d);
        }
        return reports;
      },
      py::arg("data"), py::arg("config"));

  m.attr("__version__") = "0.1.0";
}
