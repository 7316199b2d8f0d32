// Acceptance suite: one pass/fail line per criterion, nonzero exit when
// any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "kneedet/dataset.hpp"
#include "kneedet/engine.hpp"
#include "kneedet/eval.hpp"
#include "kneedet/fileio.hpp"
#include "kneedet/geometry.hpp"
#include "kneedet/loss.hpp"
#include "kneedet/model.hpp"
#include "kneedet/netpbm.hpp"
#include "kneedet/postprocess.hpp"
#include "kneedet/rng.hpp"
#include "kneedet/train.hpp"
#include "../oracles.hpp"

using namespace kneedet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

bool rel_close(double a, double b, double tol, double floor_abs = 1e-8) {
  const double denom = std::max({std::abs(a), std::abs(b), floor_abs});
  return std::abs(a - b) / denom <= tol;
}

// 1. GIoU property suite on 1e5 seeded random pairs, <= 10 s.
Outcome criterion_giou_properties() {
  Outcome o;
  Rng rng(1001);
  for (int i = 0; i < 100000 && o.ok; ++i) {
    const Box a = oracle::random_box(rng);
    const Box b = oracle::random_box(rng);
    const GIoUResult r = giou(a, b);
    o.require(r.giou > -1.0 && r.giou <= r.iou && r.iou <= 1.0,
              "bound violated at pair " + std::to_string(i));
    o.require(std::abs(r.giou - giou(b, a).giou) <= 1e-12,
              "asymmetry at pair " + std::to_string(i));
    o.require(giou(a, a).giou == 1.0, "giou(a,a) != 1 at pair " + std::to_string(i));
    const double s = rng.uniform(0.1, 10.0);
    const Box as{a.x1 * s, a.y1 * s, a.x2 * s, a.y2 * s};
    const Box bs{b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s};
    o.require(std::abs(giou(as, bs).giou - r.giou) <= 1e-9,
              "scale variance at pair " + std::to_string(i));
  }
  return o;
}

// 2. Gradient fidelity against central finite differences, <= 60 s.
Outcome criterion_gradients() {
  Outcome o;
  Rng rng(1002);

  int done = 0;
  while (done < 1000 && o.ok) {
    const Box pred = oracle::random_box(rng, -20, 20, 0.5);
    const Box target = oracle::random_box(rng, -20, 20, 0.5);
    const double eps = 1e-4;
    if (std::abs(pred.x1 - target.x1) < eps || std::abs(pred.x2 - target.x2) < eps ||
        std::abs(pred.y1 - target.y1) < eps || std::abs(pred.y2 - target.y2) < eps ||
        std::abs(pred.x1 - target.x2) < eps || std::abs(pred.x2 - target.x1) < eps ||
        std::abs(pred.y1 - target.y2) < eps || std::abs(pred.y2 - target.y1) < eps) {
      continue;  // kink pair
    }
    const auto analytic = giou_gradient(pred, target);
    const auto fd = oracle::giou_gradient_fd(pred, target, 1e-6);
    for (int i = 0; i < 4; ++i) {
      o.require(rel_close(analytic[i], fd[i], 1e-4),
                "giou_gradient mismatch at instance " + std::to_string(done));
    }
    ++done;
  }

  GridSpec g;
  g.classes = 4;
  g.net_w = g.net_h = 128;
  for (int inst = 0; inst < 50 && o.ok; ++inst) {
    g.s = rng.uniform_int(2, 4);
    g.b = rng.uniform_int(1, 3);
    g.anchors.clear();
    for (int k = 0; k < g.b; ++k) {
      g.anchors.emplace_back(rng.uniform(12, 60), rng.uniform(12, 60));
    }
    const std::vector<GridSpec> grids{g};

    std::vector<Annotation> gts;
    const int n_gt = rng.uniform_int(1, 3);
    for (int i = 0; i < n_gt; ++i) {
      Annotation a;
      a.class_id = rng.uniform_int(0, 3);
      a.box.w = rng.uniform(0.1, 0.5);
      a.box.h = rng.uniform(0.1, 0.5);
      a.box.cx = rng.uniform(a.box.w / 2, 1 - a.box.w / 2);
      a.box.cy = rng.uniform(a.box.h / 2, 1 - a.box.h / 2);
      gts.push_back(a);
    }
    const auto assignment = assign_targets(gts, grids, 128, 128, 0.5);

    std::vector<Tensor> heads{Tensor(g.b * 9, g.s, g.s)};
    for (double& v : heads[0].data) {
      v = rng.uniform(-2, 2);
    }
    const auto analytic =
        yolo_loss_gradient(heads, assignment, grids, 128, 128);
    const double step = 1e-6;
    for (std::size_t i = 0; i < heads[0].data.size() && o.ok; ++i) {
      const double saved = heads[0].data[i];
      heads[0].data[i] = saved + step;
      const double hi = yolo_loss(heads, assignment, grids, 128, 128).total;
      heads[0].data[i] = saved - step;
      const double lo = yolo_loss(heads, assignment, grids, 128, 128).total;
      heads[0].data[i] = saved;
      o.require(rel_close(analytic[0].data[i], (hi - lo) / (2 * step), 1e-4),
                "yolo_loss_gradient mismatch at instance " +
                    std::to_string(inst) + " entry " + std::to_string(i));
    }
  }
  return o;
}

// 3. Oracle equivalence for nms, average_precision and matching.
Outcome criterion_oracles() {
  Outcome o;
  Rng rng(1003);

  for (int trial = 0; trial < 10000 && o.ok; ++trial) {
    std::vector<Detection> dets;
    const int n = rng.uniform_int(0, 20);
    for (int i = 0; i < n; ++i) {
      Detection d;
      const double x = rng.uniform(0, 80), y = rng.uniform(0, 80);
      d.box = Box{x, y, x + rng.uniform(5, 40), y + rng.uniform(5, 40)};
      d.class_id = rng.uniform_int(0, 3);
      d.objectness = rng.uniform(0.2, 0.999);
      d.class_prob = rng.uniform(0.2, 0.999);
      dets.push_back(d);
    }
    const double thr = rng.uniform(0.05, 0.95);
    const auto kept = nms(dets, thr);
    const auto expected = oracle::nms_bruteforce(dets, thr);
    o.require(kept.size() == expected.size(),
              "nms size mismatch at trial " + std::to_string(trial));
    for (std::size_t i = 0; i < kept.size() && o.ok; ++i) {
      o.require(kept[i].box == dets[expected[i]].box &&
                    kept[i].class_id == dets[expected[i]].class_id,
                "nms order mismatch at trial " + std::to_string(trial));
    }
  }

  for (int trial = 0; trial < 10000 && o.ok; ++trial) {
    const int n = rng.uniform_int(0, 12);
    std::vector<bool> flags;
    int tp = 0;
    for (int i = 0; i < n; ++i) {
      const bool f = rng.uniform_int(0, 1) == 1;
      flags.push_back(f);
      tp += f;
    }
    const std::int64_t n_gt = tp + rng.uniform_int(0, 4);
    o.require(std::abs(average_precision(flags, n_gt) -
                       oracle::average_precision_envelope(flags, n_gt)) <= 1e-12,
              "average_precision mismatch at trial " + std::to_string(trial));
  }

  // exhaustive small-case matcher sweep
  const Box boxes[3] = {Box{0, 0, 10, 10}, Box{2, 2, 12, 12}, Box{20, 20, 30, 30}};
  const double scores[3] = {0.3, 0.6, 0.9};
  long checked = 0;
  for (int nd = 0; nd <= 5 && o.ok; ++nd) {
    for (int ng = 0; ng <= 5 && o.ok; ++ng) {
      // encode each detection/gt as (box idx, class, score idx) drawn
      // systematically from a seeded stream covering the space
      for (int rep = 0; rep < 200 && o.ok; ++rep) {
        ImageSample s;
        for (int i = 0; i < nd; ++i) {
          s.dets.push_back(PredBox{rng.uniform_int(0, 1),
                                   scores[rng.uniform_int(0, 2)],
                                   boxes[rng.uniform_int(0, 2)]});
        }
        for (int g2 = 0; g2 < ng; ++g2) {
          s.gts.push_back(GtBox{rng.uniform_int(0, 1), boxes[rng.uniform_int(0, 2)]});
        }
        const double thr = rng.uniform(0.2, 0.8);
        const MatchResult m = match_detections({s}, thr, 4);

        // independent restatement of greedy matching
        std::vector<int> order;
        for (int i = 0; i < nd; ++i) order.push_back(i);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
          if (s.dets[a].score != s.dets[b].score) {
            return s.dets[a].score > s.dets[b].score;
          }
          return a < b;
        });
        std::vector<bool> used(s.gts.size(), false);
        std::vector<bool> expect_tp;
        for (int idx : order) {
          int best = -1;
          double best_iou = 0;
          for (int g2 = 0; g2 < static_cast<int>(s.gts.size()); ++g2) {
            if (used[g2] || s.gts[g2].class_id != s.dets[idx].class_id) continue;
            const double v = iou(s.dets[idx].box, s.gts[g2].box);
            if (v > best_iou) {
              best_iou = v;
              best = g2;
            }
          }
          const bool tp = best >= 0 && best_iou >= thr;
          if (tp) used[best] = true;
          expect_tp.push_back(tp);
        }
        o.require(m.matches.size() == expect_tp.size(), "matcher size mismatch");
        for (std::size_t i = 0; i < expect_tp.size() && o.ok; ++i) {
          o.require(m.matches[i].tp == expect_tp[i],
                    "matcher mismatch at nd=" + std::to_string(nd) +
                        " ng=" + std::to_string(ng));
        }
        ++checked;
      }
    }
  }
  o.require(checked == 36L * 200, "matcher sweep incomplete");
  return o;
}

// 4. Published per-class precision/recall pairs reproduce the F1 column.
Outcome criterion_f1_reproduction() {
  Outcome o;
  const double pr[5][2] = {{1.000, 1.000},   // kneeApView
                           {1.000, 0.993},   // kneeLatView
                           {0.991, 1.000},   // tkaApView
                           {0.971, 1.000},   // tkaLatView
                           {0.990, 0.998}};  // all
  const double expected[5] = {1.000, 0.996, 0.995, 0.985, 0.994};
  for (int i = 0; i < 5; ++i) {
    const double f1 = f1_score(pr[i][0], pr[i][1]);
    o.require(std::abs(f1 - expected[i]) <= 0.0005,
              "f1 row " + std::to_string(i) + " = " + std::to_string(f1));
  }
  return o;
}

// 5. Split protocol on a synthetic 100-patient index, <= 1 s.
Outcome criterion_split() {
  Outcome o;
  DatasetIndex index;
  int img = 0;
  for (int p = 0; p < 100; ++p) {
    const Gender g = p < 60 ? Gender::female : Gender::male;
    for (int i = 0; i < 2; ++i) {
      ImageRecord rec;
      rec.image_path = "img_" + std::to_string(img++) + ".pgm";
      rec.patient_id = "p" + std::to_string(p);
      rec.gender = g;
      index.records.push_back(rec);
    }
  }

  const FoldAssignment a = kfold_split(index, 5, 2024);
  const FoldAssignment b = kfold_split(index, 5, 2024);
  o.require(a.fold_of_record == b.fold_of_record, "split not deterministic");

  std::map<std::string, std::set<int>> patient_folds;
  std::vector<int> f_count(5, 0), total(5, 0);
  for (std::size_t i = 0; i < index.records.size(); ++i) {
    const int f = a.fold_of_record[i];
    o.require(f >= 0 && f < 5, "image without a fold");
    patient_folds[index.records[i].patient_id].insert(f);
    ++total[f];
    if (index.records[i].gender == Gender::female) {
      ++f_count[f];
    }
  }
  for (const auto& [pid, folds] : patient_folds) {
    o.require(folds.size() == 1, "patient " + pid + " spans folds");
  }
  int assigned = 0;
  for (int f = 0; f < 5; ++f) {
    assigned += total[f];
    o.require(total[f] > 0, "empty fold");
    const double frac = static_cast<double>(f_count[f]) / total[f];
    o.require(std::abs(frac - 0.60) <= 0.05,
              "fold " + std::to_string(f) + " female fraction " +
                  std::to_string(frac));
  }
  o.require(assigned == static_cast<int>(index.records.size()),
            "images lost by the partition");
  return o;
}

// 6. Toy end-to-end training on the synthetic corpus, <= 15 min.
Outcome criterion_training(const fs::path& work) {
  Outcome o;
  const fs::path train_dir = work / "train";
  const fs::path test_dir = work / "test";
  const DatasetIndex train_index = synth_generate(200, 128, 7001, train_dir);
  const DatasetIndex test_index = synth_generate(50, 128, 7002, test_dir);

  const NetworkConfig cfg =
      parse_cfg_file(fs::path(KNEEDET_REPO_DIR) / "configs/tiny.cfg");

  TrainHyperparams hp;  // paper settings: Adam lr 0.001, batch 32
  hp.epochs = 48;
  const TrainResult result = train_toy(train_index, cfg, hp, {}, 31);

  o.require(result.history.size() == static_cast<std::size_t>(hp.epochs),
            "missing history rows");
  const double first = result.history.front().total;
  const double last = result.history.back().total;
  o.require(last < 0.25 * first,
            "loss did not drop: epoch1=" + std::to_string(first) +
                " final=" + std::to_string(last));

  const std::vector<GridSpec> grids = grids_from_config(cfg);
  std::vector<ImageSample> samples;
  for (const ImageRecord& rec : test_index.records) {
    const Tensor input = read_pgm_file(test_index.root / rec.image_path);
    const auto heads = forward(result.model, input);
    std::vector<Detection> dets;
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const auto decoded = decode(heads[h], grids[h], cfg.width, cfg.height);
      dets.insert(dets.end(), decoded.begin(), decoded.end());
    }
    dets = nms(filter_confidence(dets, 0.5), 0.45);
    ImageSample s;
    for (const Detection& d : dets) {
      s.dets.push_back(PredBox{d.class_id, d.score(), d.box});
    }
    for (const Annotation& ann : rec.annotations) {
      s.gts.push_back(GtBox{ann.class_id, norm_to_abs(ann.box, 128, 128)});
    }
    samples.push_back(std::move(s));
  }
  const EvalReport report = evaluate(samples, 0.5);
  o.require(report.map >= 0.90,
            "held-out mAP@0.5 = " + std::to_string(report.map));
  o.detail = o.detail.empty()
                 ? "loss " + format_double_6g(first) + " -> " +
                       format_double_6g(last) + ", mAP " +
                       format_double_6g(report.map)
                 : o.detail;
  return o;
}

// 7. Format round-trips: weights bytes, labels at 6 significant digits,
// cfg fixed point.
Outcome criterion_roundtrips(const fs::path& work) {
  Outcome o;
  const std::string cfg_text =
      "[net]\nwidth=64\nheight=64\nchannels=1\n"
      "[convolutional]\nfilters=8\nsize=3\nstride=2\npad=1\nbatch_normalize=1\nactivation=leaky\n"
      "[convolutional]\nfilters=8\nsize=3\nstride=1\npad=1\nactivation=leaky\n"
      "[shortcut]\nfrom=-2\n"
      "[convolutional]\nfilters=27\nsize=1\nactivation=linear\n"
      "[yolo]\nmask=0,1,2\nanchors=14.25,14, 18,18.5, 23,23\nclasses=4\n";
  const NetworkConfig cfg = parse_cfg(cfg_text);
  const std::string canonical = serialize_cfg(cfg);
  o.require(parse_cfg(canonical) == cfg, "cfg reparse differs");
  o.require(serialize_cfg(parse_cfg(canonical)) == canonical,
            "cfg serialization not a fixed point");

  Rng rng(1007);
  Model m = init_model(cfg, 55);
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    if (cfg.layers[i].kind != LayerKind::convolutional) continue;
    for (double& v : m.conv[i].bias) v = rng.normal();
    for (double& v : m.conv[i].bn_scale) v = rng.uniform(0.5, 1.5);
    for (double& v : m.conv[i].bn_mean) v = rng.normal();
    for (double& v : m.conv[i].bn_var) v = rng.uniform(0.1, 2.0);
  }
  const auto bytes = save_weights(m);
  const Model reloaded = load_weights(cfg, bytes);
  o.require(save_weights(reloaded) == bytes, "weights round-trip not byte-identical");

  const fs::path wfile = work / "rt.weights";
  save_weights_file(m, wfile);
  o.require(read_file_bytes(wfile) == bytes, "weights file differs from stream");

  std::vector<Annotation> anns;
  for (int i = 0; i < 100; ++i) {
    Annotation a;
    a.class_id = rng.uniform_int(0, 3);
    a.box.w = rng.uniform(0.01, 0.9);
    a.box.h = rng.uniform(0.01, 0.9);
    a.box.cx = rng.uniform(a.box.w / 2, 1 - a.box.w / 2);
    a.box.cy = rng.uniform(a.box.h / 2, 1 - a.box.h / 2);
    anns.push_back(a);
  }
  const auto back = read_labels(write_labels(anns));
  o.require(back.size() == anns.size(), "label count changed");
  for (std::size_t i = 0; i < anns.size() && o.ok; ++i) {
    const bool close =
        back[i].class_id == anns[i].class_id &&
        rel_close(back[i].box.cx, anns[i].box.cx, 1e-5) &&
        rel_close(back[i].box.cy, anns[i].box.cy, 1e-5) &&
        rel_close(back[i].box.w, anns[i].box.w, 1e-5) &&
        rel_close(back[i].box.h, anns[i].box.h, 1e-5);
    o.require(close, "label round-trip drifted at row " + std::to_string(i));
  }
  o.require(write_labels(back) == write_labels(anns), "labels not a fixed point");
  return o;
}

// 8. Engine fidelity against the naive oracle; bitwise reproducibility.
Outcome criterion_engine(const fs::path&) {
  Outcome o;
  Rng rng(1008);
  for (int trial = 0; trial < 100 && o.ok; ++trial) {
    const int in_c = rng.uniform_int(1, 6);
    const int size = 1 + 2 * rng.uniform_int(0, 2);
    const int stride = rng.uniform_int(1, 3);
    const int pad_flag = rng.uniform_int(0, 1);
    const int filters = rng.uniform_int(1, 8);
    const int h = rng.uniform_int(size, 16);
    const int w = rng.uniform_int(size, 16);
    const bool leaky = rng.uniform_int(0, 1) == 1;

    Tensor in(in_c, h, w);
    for (double& v : in.data) v = rng.uniform(-1, 1);
    std::vector<double> kernel(static_cast<std::size_t>(filters) * in_c * size * size);
    std::vector<double> bias(filters);
    for (double& v : kernel) v = rng.uniform(-1, 1);
    for (double& v : bias) v = rng.uniform(-1, 1);

    LayerSpec spec;
    spec.kind = LayerKind::convolutional;
    spec.filters = filters;
    spec.size = size;
    spec.stride = stride;
    spec.pad_flag = pad_flag;
    spec.activation = leaky ? Activation::leaky : Activation::linear;

    const Tensor got = conv2d(in, spec, kernel, bias);
    const Tensor want = oracle::conv2d_naive(in, filters, size, stride,
                                             spec.padding(), kernel, bias, leaky);
    o.require(got.same_shape(want), "conv shape mismatch");
    for (std::size_t i = 0; i < got.data.size() && o.ok; ++i) {
      o.require(rel_close(got.data[i], want.data[i], 1e-5, 1.0),
                "conv mismatch at trial " + std::to_string(trial));
    }

    // upsample / shortcut / concat against scalar definitions
    const int factor = rng.uniform_int(1, 3);
    const Tensor up = upsample_nearest(in, factor);
    for (int c = 0; c < in.c && o.ok; ++c) {
      for (int y = 0; y < up.h && o.ok; ++y) {
        for (int x = 0; x < up.w; ++x) {
          if (up.at(c, y, x) != in.at(c, y / factor, x / factor)) {
            o.require(false, "upsample mismatch");
            break;
          }
        }
      }
    }
    Tensor other(in_c, h, w);
    for (double& v : other.data) v = rng.uniform(-1, 1);
    const Tensor sum = shortcut_add(in, other);
    for (std::size_t i = 0; i < sum.data.size() && o.ok; ++i) {
      o.require(sum.data[i] == in.data[i] + other.data[i], "shortcut mismatch");
    }
    const Tensor cat = route_concat({&in, &other});
    o.require(cat.c == 2 * in_c, "concat channel count");
  }

  // forward reproducibility on a small random model
  const NetworkConfig cfg = parse_cfg(
      "[net]\nwidth=32\nheight=32\nchannels=1\n"
      "[convolutional]\nfilters=6\nsize=3\nstride=2\npad=1\nactivation=leaky\n"
      "[convolutional]\nfilters=6\nsize=3\nstride=1\npad=1\nactivation=leaky\n"
      "[shortcut]\nfrom=-2\n"
      "[convolutional]\nfilters=27\nsize=1\nactivation=linear\n"
      "[yolo]\nmask=0,1,2\nanchors=8,8, 12,12, 16,16\nclasses=4\n");
  const Model model = init_model(cfg, 99);
  Tensor input(1, 32, 32);
  for (double& v : input.data) v = rng.uniform(0, 1);
  const auto h1 = forward(model, input);
  const auto h2 = forward(model, input);
  o.require(h1.size() == h2.size() && h1[0].data == h2[0].data,
            "forward not bitwise reproducible");
  return o;
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "kneedet_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  struct Row {
    int id;
    std::string name;
    Outcome outcome;
    double seconds;
    double limit;
  };
  std::vector<Row> rows;

  const auto run = [&](int id, const std::string& name, double limit,
                       auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (limit > 0 && seconds > limit && o.ok) {
      o.ok = false;
      o.detail = "runtime " + std::to_string(seconds) + "s exceeds " +
                 std::to_string(limit) + "s";
    }
    rows.push_back({id, name, o, seconds, limit});
  };

  run(1, "giou property suite (1e5 pairs)", 10.0, criterion_giou_properties);
  run(2, "gradient fidelity vs finite differences", 60.0, criterion_gradients);
  run(3, "oracle equivalence (nms, ap, matching)", 0.0, criterion_oracles);
  run(4, "published precision/recall pairs -> F1 column", 0.0,
      criterion_f1_reproduction);
  run(5, "patient-disjoint gender-stratified split", 1.0, criterion_split);
  run(6, "toy end-to-end training and held-out mAP", 900.0,
      [&] { return criterion_training(work); });
  run(7, "format round-trips (weights, labels, cfg)", 0.0,
      [&] { return criterion_roundtrips(work); });
  run(8, "engine fidelity vs naive oracles", 0.0,
      [&] { return criterion_engine(work); });

  bool all_ok = true;
  for (const Row& r : rows) {
    all_ok = all_ok && r.outcome.ok;
    std::printf("[%s] criterion %d: %s (%.1fs)%s%s\n",
                r.outcome.ok ? "PASS" : "FAIL", r.id, r.name.c_str(), r.seconds,
                r.outcome.detail.empty() ? "" : " - ",
                r.outcome.detail.c_str());
  }
  fs::remove_all(work);
  return all_ok ? 0 : 1;
}
