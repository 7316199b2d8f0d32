#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <filesystem>
#include <map>

#include "kneedet/dataset.hpp"
#include "kneedet/engine.hpp"
#include "kneedet/eval.hpp"
#include "kneedet/fileio.hpp"
#include "kneedet/geometry.hpp"
#include "kneedet/model.hpp"
#include "kneedet/netpbm.hpp"
#include "kneedet/postprocess.hpp"
#include "kneedet/train.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace kneedet;

namespace {

std::vector<Detection> detect_image(const fs::path& cfg_path,
                                    const fs::path& weights_path,
                                    const fs::path& image_path, double conf,
                                    double nms_iou) {
  const NetworkConfig cfg = parse_cfg_file(cfg_path);
  const Model model = load_weights_file(cfg, weights_path);
  const std::vector<GridSpec> grids = grids_from_config(cfg);

  Tensor input = read_pgm_file(image_path);
  if (cfg.channels == 3 && input.c == 1) {
    Tensor rgb(3, input.h, input.w);
    for (int ch = 0; ch < 3; ++ch) {
      std::copy(input.data.begin(), input.data.end(),
                rgb.data.begin() + static_cast<std::size_t>(ch) * input.h * input.w);
    }
    input = std::move(rgb);
  }
  const auto heads = forward(model, input);
  std::vector<Detection> dets;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const auto decoded = decode(heads[h], grids[h], cfg.width, cfg.height);
    dets.insert(dets.end(), decoded.begin(), decoded.end());
  }
  return nms(filter_confidence(dets, conf), nms_iou);
}

std::map<std::string, std::string> train_toy_files(
    const fs::path& index_csv, const fs::path& cfg_path, const fs::path& out_dir,
    int epochs, int batch, double lr, std::uint64_t seed) {
  const DatasetIndex index = load_index(index_csv);
  const NetworkConfig cfg = parse_cfg_file(cfg_path);
  TrainHyperparams hp;
  hp.epochs = epochs;
  hp.batch_size = batch;
  hp.learning_rate = lr;
  const TrainResult result = train_toy(index, cfg, hp, {}, seed);

  fs::create_directories(out_dir);
  const fs::path weights_file = out_dir / "model.weights";
  const fs::path history_file = out_dir / "loss.csv";
  save_weights_file(result.model, weights_file);
  write_file_atomic(history_file, history_to_csv(result.history));
  return {{"weights", weights_file.string()}, {"history", history_file.string()}};
}

std::string evaluate_json_dirs(const fs::path& pred_dir,
                               const fs::path& index_csv, double iou_threshold) {
  const DatasetIndex index = load_index(index_csv);
  std::vector<ImageSample> samples(index.records.size());
  for (std::size_t i = 0; i < index.records.size(); ++i) {
    const ImageRecord& rec = index.records[i];
    const auto [w, h] = read_pgm_size(index.root / rec.image_path);
    for (const Annotation& a : rec.annotations) {
      samples[i].gts.push_back(GtBox{a.class_id, norm_to_abs(a.box, w, h)});
    }
    const fs::path pred_file =
        pred_dir / (fs::path(rec.image_path).stem().string() + ".txt");
    samples[i].dets = read_detections(read_file_text(pred_file));
  }
  return report_to_json(evaluate(samples, iou_threshold));
}

py::array_t<double> read_pgm_array(const fs::path& path) {
  const Tensor t = read_pgm_file(path);
  py::array_t<double> arr({t.h, t.w});
  std::copy(t.data.begin(), t.data.end(), arr.mutable_data());
  return arr;
}

}  // namespace

PYBIND11_MODULE(_kneedet, m) {
  m.doc() = "knee joint area detection and evaluation toolkit";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<InvalidInputError>(m, "InvalidInputError",
                                            PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<Box>(m, "Box")
      .def(py::init<double, double, double, double>(), py::arg("x1"),
           py::arg("y1"), py::arg("x2"), py::arg("y2"))
      .def_readwrite("x1", &Box::x1)
      .def_readwrite("y1", &Box::y1)
      .def_readwrite("x2", &Box::x2)
      .def_readwrite("y2", &Box::y2)
      .def("area", &Box::area)
      .def("__repr__", [](const Box& b) {
        return "Box(" + format_double_6g(b.x1) + ", " + format_double_6g(b.y1) +
               ", " + format_double_6g(b.x2) + ", " + format_double_6g(b.y2) + ")";
      });

  py::class_<NormBox>(m, "NormBox")
      .def(py::init<double, double, double, double>(), py::arg("cx"),
           py::arg("cy"), py::arg("w"), py::arg("h"))
      .def_readwrite("cx", &NormBox::cx)
      .def_readwrite("cy", &NormBox::cy)
      .def_readwrite("w", &NormBox::w)
      .def_readwrite("h", &NormBox::h);

  py::class_<GIoUResult>(m, "GIoUResult")
      .def_readonly("giou", &GIoUResult::giou)
      .def_readonly("iou", &GIoUResult::iou)
      .def_readonly("intersection", &GIoUResult::intersection)
      .def_readonly("union_area", &GIoUResult::union_area)
      .def_readonly("hull_area", &GIoUResult::hull_area);

  py::class_<Detection>(m, "Detection")
      .def(py::init([](const Box& box, int class_id, double objectness,
                       double class_prob) {
             return Detection{box, class_id, objectness, class_prob};
           }),
           py::arg("box"), py::arg("class_id"), py::arg("objectness"),
           py::arg("class_prob"))
      .def_readonly("box", &Detection::box)
      .def_readonly("class_id", &Detection::class_id)
      .def_readonly("objectness", &Detection::objectness)
      .def_readonly("class_prob", &Detection::class_prob)
      .def_property_readonly("score", &Detection::score);

  m.def("iou", &iou, py::arg("a"), py::arg("b"));
  m.def("giou", &giou, py::arg("a"), py::arg("b"));
  m.def("giou_gradient", &giou_gradient, py::arg("pred"), py::arg("target"));
  m.def("norm_to_abs", &norm_to_abs, py::arg("box"), py::arg("img_w"),
        py::arg("img_h"));
  m.def("abs_to_norm", &abs_to_norm, py::arg("box"), py::arg("img_w"),
        py::arg("img_h"));

  m.def("nms", &nms, py::arg("detections"), py::arg("iou_threshold"));
  m.def("filter_confidence", &filter_confidence, py::arg("detections"),
        py::arg("threshold"));

  m.def("f1_score", &f1_score, py::arg("precision"), py::arg("recall"));
  m.def("average_precision", &average_precision, py::arg("tp_flags"),
        py::arg("n_gt"));

  m.def("class_names", [] { return class_names(); });

  m.def("detect", &detect_image, py::arg("cfg"), py::arg("weights"),
        py::arg("image"), py::arg("conf") = 0.5, py::arg("nms_iou") = 0.45,
        "Run the forward pass, decode, filter and suppress; returns "
        "detections in the network pixel frame.");

  m.def("synth_generate",
        [](int n, int size, std::uint64_t seed, const fs::path& out_dir) {
          const DatasetIndex index = synth_generate(n, size, seed, out_dir);
          return (out_dir / "index.csv").string();
        },
        py::arg("n"), py::arg("size"), py::arg("seed"), py::arg("out_dir"),
        "Write a synthetic PGM corpus; returns the index csv path.");

  m.def("kfold_split",
        [](const fs::path& index_csv, int k, std::uint64_t seed) {
          const DatasetIndex index = load_index(index_csv);
          const FoldAssignment folds = kfold_split(index, k, seed);
          std::map<std::string, int> out;
          for (std::size_t i = 0; i < index.records.size(); ++i) {
            out[index.records[i].image_path] = folds.fold_of_record[i];
          }
          return out;
        },
        py::arg("index_csv"), py::arg("k"), py::arg("seed"),
        "Patient-grouped gender-stratified split; returns image -> fold.");

  m.def("train_toy", &train_toy_files, py::arg("index_csv"), py::arg("cfg"),
        py::arg("out_dir"), py::arg("epochs") = 48, py::arg("batch") = 32,
        py::arg("lr") = 0.001, py::arg("seed") = 0,
        "Desk-scale training; returns paths of the written weights and "
        "loss history.");

  m.def("evaluate_json", &evaluate_json_dirs, py::arg("pred_dir"),
        py::arg("index_csv"), py::arg("iou_threshold") = 0.5,
        "Score a directory of detection files against an index; returns "
        "the JSON report.");

  m.def("read_pgm", &read_pgm_array, py::arg("path"),
        "Read a PGM image as a (h, w) float array scaled to [0,1].");

  m.attr("__version__") = "0.1.0";
}
