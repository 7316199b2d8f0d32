#include "kneedet/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "kneedet/dataset.hpp"
#include "kneedet/engine.hpp"
#include "kneedet/errors.hpp"
#include "kneedet/eval.hpp"
#include "kneedet/fileio.hpp"
#include "kneedet/model.hpp"
#include "kneedet/netpbm.hpp"
#include "kneedet/postprocess.hpp"
#include "kneedet/render.hpp"
#include "kneedet/train.hpp"

namespace kneedet {

namespace fs = std::filesystem;

namespace {

Tensor load_input_image(const fs::path& path, const NetworkConfig& cfg) {
  Tensor img = read_pgm_file(path);
  if (cfg.channels == 3 && img.c == 1) {
    Tensor rgb(3, img.h, img.w);
    for (int ch = 0; ch < 3; ++ch) {
      std::copy(img.data.begin(), img.data.end(),
                rgb.data.begin() + static_cast<std::size_t>(ch) * img.h * img.w);
    }
    return rgb;
  }
  return img;
}

int cmd_detect(const std::string& cfg_path, const std::string& weights_path,
               const std::vector<std::string>& images, double conf, double nms_iou,
               const std::string& out_dir) {
  const NetworkConfig cfg = parse_cfg_file(cfg_path);
  const Model model = load_weights_file(cfg, weights_path);
  const std::vector<GridSpec> grids = grids_from_config(cfg);

  fs::create_directories(out_dir);
  std::set<std::string> stems;
  for (const std::string& image : images) {
    const std::string stem = fs::path(image).stem().string();
    if (!stems.insert(stem).second) {
      throw InvalidInputError("duplicate output name for image '" + image + "'");
    }
  }
  for (const std::string& image : images) {
    const Tensor input = load_input_image(image, cfg);
    const std::vector<Tensor> heads = forward(model, input);
    std::vector<Detection> dets;
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const auto decoded = decode(heads[h], grids[h], cfg.width, cfg.height);
      dets.insert(dets.end(), decoded.begin(), decoded.end());
    }
    dets = nms(filter_confidence(dets, conf), nms_iou);
    const fs::path out_file =
        fs::path(out_dir) / (fs::path(image).stem().string() + ".txt");
    write_file_atomic(out_file, write_detections(dets));
    std::cout << image << " -> " << out_file.string() << " (" << dets.size()
              << " detections)\n";
  }
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& index_path,
             double iou_threshold, const std::string& out_path) {
  const DatasetIndex index = load_index(index_path);

  std::map<std::string, int> stem_to_record;
  for (int i = 0; i < static_cast<int>(index.records.size()); ++i) {
    const std::string stem = fs::path(index.records[i].image_path).stem().string();
    if (!stem_to_record.emplace(stem, i).second) {
      throw InvalidInputError("duplicate image stem '" + stem + "' in index");
    }
  }

  std::set<std::string> pred_stems;
  for (const auto& entry : fs::directory_iterator(pred_dir)) {
    if (entry.path().extension() == ".txt") {
      pred_stems.insert(entry.path().stem().string());
    }
  }
  for (const auto& [stem, _] : stem_to_record) {
    if (!pred_stems.contains(stem)) {
      throw InvalidInputError("no detection file for image '" + stem +
                              "' in " + pred_dir);
    }
  }
  for (const std::string& stem : pred_stems) {
    if (!stem_to_record.contains(stem)) {
      throw InvalidInputError("detection file '" + stem +
                              ".txt' has no matching index image");
    }
  }

  std::vector<ImageSample> samples(index.records.size());
  for (int i = 0; i < static_cast<int>(index.records.size()); ++i) {
    const ImageRecord& rec = index.records[i];
    const auto [w, h] = read_pgm_size(index.root / rec.image_path);
    for (const Annotation& a : rec.annotations) {
      samples[i].gts.push_back(GtBox{a.class_id, norm_to_abs(a.box, w, h)});
    }
    const std::string stem = fs::path(rec.image_path).stem().string();
    const fs::path pred_file = fs::path(pred_dir) / (stem + ".txt");
    try {
      samples[i].dets = read_detections(read_file_text(pred_file));
    } catch (const ParseError& e) {
      throw ParseError(pred_file.string() + ": " + e.what());
    }
  }

  const EvalReport report = evaluate(samples, iou_threshold);
  const std::string json = report_to_json(report);
  if (out_path.empty()) {
    std::cout << json;
  } else {
    write_file_atomic(out_path, json);
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

int cmd_split(const std::string& index_path, int folds, std::uint64_t seed,
              const std::string& out_path) {
  const DatasetIndex index = load_index(index_path);
  const FoldAssignment assignment = kfold_split(index, folds, seed);
  for (const std::string& w : assignment.warnings) {
    std::cerr << "warning: " << w << "\n";
  }
  write_file_atomic(out_path, write_folds_csv(index, assignment));
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_synth(int n, int size, std::uint64_t seed, const std::string& out_dir) {
  const DatasetIndex index = synth_generate(n, size, seed, out_dir);
  std::cout << "wrote " << index.records.size() << " images ("
            << index.total_annotations() << " boxes) to " << out_dir << "\n";
  return 0;
}

int cmd_train_toy(const std::string& index_path, const std::string& cfg_path,
                  const TrainHyperparams& hp, const LossWeights& weights,
                  std::uint64_t seed, const std::string& out_dir) {
  const DatasetIndex index = load_index(index_path);
  const NetworkConfig cfg = parse_cfg_file(cfg_path);
  const TrainResult result = train_toy(index, cfg, hp, weights, seed);
  if (result.dropped_targets > 0) {
    std::cerr << "warning: " << result.dropped_targets
              << " ground truths dropped by anchor collisions\n";
  }

  fs::create_directories(out_dir);
  const fs::path weights_file = fs::path(out_dir) / "model.weights";
  const fs::path history_file = fs::path(out_dir) / "loss.csv";
  save_weights_file(result.model, weights_file);
  write_file_atomic(history_file, history_to_csv(result.history));
  std::cout << "wrote " << weights_file.string() << "\n";
  std::cout << "wrote " << history_file.string() << "\n";
  if (!result.history.empty()) {
    std::cout << "final epoch total loss "
              << format_double_6g(result.history.back().total) << "\n";
  }
  return 0;
}

int cmd_render(const std::string& image_path, const std::string& dets_path,
               const std::string& labels_path, const std::string& out_path) {
  const Tensor img = read_pgm_file(image_path);
  std::vector<OverlayBox> boxes;
  if (!dets_path.empty()) {
    for (const PredBox& p : read_detections(read_file_text(dets_path))) {
      boxes.push_back(OverlayBox{p.class_id, p.box});
    }
  } else if (!labels_path.empty()) {
    for (const Annotation& a : read_labels(read_file_text(labels_path))) {
      boxes.push_back(OverlayBox{a.class_id, norm_to_abs(a.box, img.w, img.h)});
    }
  }
  const auto rgb = render_overlay(img, boxes);
  write_file_atomic(out_path, write_ppm(img.w, img.h, rgb));
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int run_cli(std::vector<std::string> args) {
  CLI::App app{"knee joint area detection and evaluation toolkit"};
  app.name("kneedet");
  app.require_subcommand(1);

  // detect
  auto* detect = app.add_subcommand("detect", "run detection on PGM images");
  std::string cfg_path, weights_path, out_path;
  std::vector<std::string> images;
  double conf = 0.5, nms_iou = 0.45;
  detect->add_option("--cfg", cfg_path, "network definition file")->required();
  detect->add_option("--weights", weights_path, "binary weights file")->required();
  detect->add_option("--images", images, "input PGM images")->required();
  detect->add_option("--conf", conf, "confidence threshold (default 0.5)");
  detect->add_option("--nms", nms_iou, "NMS IoU threshold (default 0.45)");
  detect->add_option("--out", out_path, "output directory for detection files")
      ->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score detections against an index");
  std::string pred_dir, index_path, report_path;
  double eval_iou = 0.5;
  eval_cmd->add_option("preds", pred_dir, "directory of detection .txt files")
      ->required();
  eval_cmd->add_option("--index", index_path, "dataset index csv")->required();
  eval_cmd->add_option("--iou", eval_iou, "matching IoU threshold (default 0.5)");
  eval_cmd->add_option("--out", report_path, "report file (default stdout)");

  // split
  auto* split = app.add_subcommand(
      "split", "patient-grouped gender-stratified k-fold split");
  std::string split_index, split_out;
  int folds = 5;
  std::uint64_t split_seed = 0;
  split->add_option("--index", split_index, "dataset index csv")->required();
  split->add_option("--folds", folds, "fold count (default 5)");
  split->add_option("--seed", split_seed, "tie-breaking seed");
  split->add_option("--out", split_out, "fold csv output")->required();

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic PGM corpus");
  int synth_n = 0, synth_size = 0;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("n", synth_n, "number of images")->required();
  synth->add_option("size", synth_size, "square image size in px")->required();
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  // train-toy
  auto* train = app.add_subcommand("train-toy", "desk-scale training loop");
  std::string train_index, train_cfg, train_out;
  TrainHyperparams hp;
  LossWeights lw;
  std::uint64_t train_seed = 0;
  train->add_option("--index", train_index, "dataset index csv")->required();
  train->add_option("--cfg", train_cfg, "network definition file")->required();
  train->add_option("--epochs", hp.epochs, "training epochs (default 48)");
  train->add_option("--batch", hp.batch_size, "batch size (default 32)");
  train->add_option("--lr", hp.learning_rate, "Adam learning rate (default 0.001)");
  train->add_option("--seed", train_seed, "init/shuffle seed");
  train->add_option("--lambda-box", lw.box, "giou term weight (default 1)");
  train->add_option("--lambda-obj", lw.obj, "objectness term weight (default 1)");
  train->add_option("--lambda-noobj", lw.noobj,
                    "no-objectness term weight (default 1)");
  train->add_option("--lambda-cls", lw.cls, "class term weight (default 1)");
  train->add_option("--out", train_out, "output directory")->required();

  // render
  auto* render = app.add_subcommand("render", "draw boxes onto an image as PPM");
  std::string render_image, render_dets, render_labels, render_out;
  render->add_option("image", render_image, "input PGM image")->required();
  auto* dets_opt = render->add_option("--dets", render_dets,
                                      "detection file (class score x1 y1 x2 y2)");
  auto* labels_opt =
      render->add_option("--labels", render_labels, "label file (normalized)");
  dets_opt->excludes(labels_opt);
  render->add_option("--out", render_out, "output PPM file")->required();

  std::reverse(args.begin(), args.end());
  try {
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*detect) {
      return cmd_detect(cfg_path, weights_path, images, conf, nms_iou, out_path);
    }
    if (*eval_cmd) {
      return cmd_eval(pred_dir, index_path, eval_iou, report_path);
    }
    if (*split) {
      return cmd_split(split_index, folds, split_seed, split_out);
    }
    if (*synth) {
      return cmd_synth(synth_n, synth_size, synth_seed, synth_out);
    }
    if (*train) {
      return cmd_train_toy(train_index, train_cfg, hp, lw, train_seed, train_out);
    }
    if (*render) {
      if (render_dets.empty() && render_labels.empty()) {
        std::cerr << "kneedet render: one of --dets or --labels is required\n";
        return 1;
      }
      return cmd_render(render_image, render_dets, render_labels, render_out);
    }
  } catch (const NumericError& e) {
    std::cerr << "kneedet: numeric fault: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "kneedet: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "kneedet: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace kneedet
