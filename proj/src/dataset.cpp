#include "kneedet/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_set>

#include "kneedet/errors.hpp"
#include "kneedet/fileio.hpp"
#include "kneedet/netpbm.hpp"
#include "kneedet/rng.hpp"
#include "kneedet/tensor.hpp"

namespace kneedet {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

double parse_double_or_throw(std::string_view tok, const std::string& where) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError(where + ": malformed number '" + std::string(tok) + "'");
  }
  return v;
}

int parse_int_or_throw(std::string_view tok, const std::string& where) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError(where + ": malformed integer '" + std::string(tok) + "'");
  }
  return v;
}

template <typename Fn>
void for_each_line(std::string_view text, Fn fn) {
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    const std::size_t eol = text.find('\n', pos);
    std::string_view line = text.substr(
        pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.remove_suffix(1);
    }
    fn(line_no, line);
  }
}

}  // namespace

const std::array<std::string, 4>& class_names() {
  static const std::array<std::string, 4> names = {
      "kneeApView", "kneeLatView", "tkaApView", "tkaLatView"};
  return names;
}

int class_id_from_name(std::string_view name) {
  const auto& names = class_names();
  for (int i = 0; i < kClassCount; ++i) {
    if (names[i] == name) return i;
  }
  return -1;
}

std::string_view to_string(Gender g) {
  switch (g) {
    case Gender::female: return "F";
    case Gender::male: return "M";
    case Gender::unknown: return "unknown";
  }
  return "?";
}

Gender gender_from_string(std::string_view s) {
  if (s == "F") return Gender::female;
  if (s == "M") return Gender::male;
  if (s == "unknown") return Gender::unknown;
  throw ParseError("unknown gender '" + std::string(s) +
                   "' (expected F, M or unknown)");
}

std::vector<Annotation> read_labels(std::string_view text) {
  std::vector<Annotation> out;
  for_each_line(text, [&](int line_no, std::string_view line) {
    const auto tokens = split_ws(line);
    if (tokens.empty()) {
      return;
    }
    const std::string where = "labels line " + std::to_string(line_no);
    if (tokens.size() != 5) {
      throw ParseError(where + ": expected 5 fields, got " +
                       std::to_string(tokens.size()));
    }
    Annotation a;
    a.class_id = parse_int_or_throw(tokens[0], where);
    if (a.class_id < 0 || a.class_id >= kClassCount) {
      throw ParseError(where + ": class id " + std::to_string(a.class_id) +
                       " outside schema range 0.." + std::to_string(kClassCount - 1));
    }
    a.box.cx = parse_double_or_throw(tokens[1], where);
    a.box.cy = parse_double_or_throw(tokens[2], where);
    a.box.w = parse_double_or_throw(tokens[3], where);
    a.box.h = parse_double_or_throw(tokens[4], where);
    if (a.box.cx < 0 || a.box.cx > 1 || a.box.cy < 0 || a.box.cy > 1) {
      throw ParseError(where + ": center coordinates outside [0,1]");
    }
    if (a.box.w <= 0 || a.box.h <= 0) {
      throw ParseError(where + ": box extent must be positive");
    }
    if (a.box.w > 1 || a.box.h > 1) {
      throw ParseError(where + ": box extent outside (0,1]");
    }
    out.push_back(a);
  });
  return out;
}

std::string write_labels(const std::vector<Annotation>& annotations) {
  std::string out;
  for (const Annotation& a : annotations) {
    out += std::to_string(a.class_id);
    out += ' ';
    out += format_double_6g(a.box.cx);
    out += ' ';
    out += format_double_6g(a.box.cy);
    out += ' ';
    out += format_double_6g(a.box.w);
    out += ' ';
    out += format_double_6g(a.box.h);
    out += '\n';
  }
  return out;
}

std::int64_t DatasetIndex::total_annotations() const {
  return std::accumulate(class_counts.begin(), class_counts.end(),
                         std::int64_t{0});
}

DatasetIndex parse_index(std::string_view csv_text,
                         const std::filesystem::path& base_dir) {
  DatasetIndex index;
  index.root = base_dir;
  std::unordered_set<std::string> seen_paths;
  bool have_header = false;

  for_each_line(csv_text, [&](int line_no, std::string_view line) {
    if (line.empty()) {
      return;
    }
    if (!have_header) {
      if (line != "image_path,patient_id,gender,label_path") {
        throw ParseError("index line 1: expected header "
                         "'image_path,patient_id,gender,label_path'");
      }
      have_header = true;
      return;
    }
    const std::string where = "index line " + std::to_string(line_no);
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(
          start, comma == std::string_view::npos ? std::string_view::npos
                                                 : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() != 4) {
      throw ParseError(where + ": expected 4 comma-separated fields, got " +
                       std::to_string(fields.size()));
    }
    ImageRecord rec;
    rec.image_path = std::string(fields[0]);
    rec.patient_id = std::string(fields[1]);
    rec.label_path = std::string(fields[3]);
    if (rec.image_path.empty() || rec.patient_id.empty() || rec.label_path.empty()) {
      throw ParseError(where + ": empty field");
    }
    try {
      rec.gender = gender_from_string(fields[2]);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!seen_paths.insert(rec.image_path).second) {
      throw ParseError(where + ": duplicate image_path '" + rec.image_path + "'");
    }
    const std::filesystem::path label_file = base_dir / rec.label_path;
    std::string label_text;
    try {
      label_text = read_file_text(label_file);
    } catch (const IoError& e) {
      throw IoError(where + ": " + e.what());
    }
    try {
      rec.annotations = read_labels(label_text);
    } catch (const ParseError& e) {
      throw ParseError(label_file.string() + ": " + e.what());
    }
    for (const Annotation& a : rec.annotations) {
      ++index.class_counts[a.class_id];
    }
    index.records.push_back(std::move(rec));
  });

  if (!have_header && !index.records.empty()) {
    throw ParseError("index: missing header");
  }
  return index;
}

DatasetIndex load_index(const std::filesystem::path& csv_path) {
  const std::string text = read_file_text(csv_path);
  auto parent = csv_path.parent_path();
  if (parent.empty()) {
    parent = ".";
  }
  return parse_index(text, parent);
}

FoldAssignment kfold_split(const DatasetIndex& index, int k, std::uint64_t seed) {
  if (k < 2) {
    throw InvalidInputError("k must be >= 2");
  }
  if (index.records.empty()) {
    throw InvalidInputError("cannot split an empty index");
  }

  FoldAssignment out;
  out.k = k;
  out.fold_of_record.assign(index.records.size(), -1);
  out.fold_patients.assign(k, {});

  Rng rng(seed);
  std::vector<std::int64_t> global_load(k, 0);

  for (const Gender stratum : {Gender::female, Gender::male, Gender::unknown}) {
    std::map<std::string, std::vector<int>> patients;  // ordered for determinism
    for (int i = 0; i < static_cast<int>(index.records.size()); ++i) {
      if (index.records[i].gender == stratum) {
        patients[index.records[i].patient_id].push_back(i);
      }
    }
    if (patients.empty()) {
      continue;
    }
    if (static_cast<int>(patients.size()) < k) {
      out.warnings.push_back("gender stratum '" + std::string(to_string(stratum)) +
                             "' has " + std::to_string(patients.size()) +
                             " patients for " + std::to_string(k) + " folds");
    }

    std::vector<std::pair<std::string, std::vector<int>>> order(patients.begin(),
                                                                patients.end());
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      return a.second.size() > b.second.size();
    });

    std::vector<std::int64_t> stratum_load(k, 0);
    for (const auto& [patient, records] : order) {
      std::pair<std::int64_t, std::int64_t> best{
          std::numeric_limits<std::int64_t>::max(),
          std::numeric_limits<std::int64_t>::max()};
      std::vector<int> candidates;
      for (int f = 0; f < k; ++f) {
        const std::pair<std::int64_t, std::int64_t> key{stratum_load[f],
                                                        global_load[f]};
        if (key < best) {
          best = key;
          candidates.assign(1, f);
        } else if (key == best) {
          candidates.push_back(f);
        }
      }
      const int fold =
          candidates[rng.uniform_int(0, static_cast<int>(candidates.size()) - 1)];
      stratum_load[fold] += static_cast<std::int64_t>(records.size());
      global_load[fold] += static_cast<std::int64_t>(records.size());
      out.fold_patients[fold].push_back(patient);
      for (int r : records) {
        out.fold_of_record[r] = fold;
      }
    }
  }
  return out;
}

std::string write_folds_csv(const DatasetIndex& index, const FoldAssignment& folds) {
  std::string out = "image_path,fold\n";
  for (std::size_t i = 0; i < index.records.size(); ++i) {
    out += index.records[i].image_path;
    out += ',';
    out += std::to_string(folds.fold_of_record[i]);
    out += '\n';
  }
  return out;
}

namespace {

// Pixel-inclusion tests for the four glyph styles, evaluated on a local
// (w x h) canvas at pixel centers.
bool glyph_pixel(int style, int x, int y, int w, int h) {
  const double rx = std::max(w - 1, 1) / 2.0;
  const double ry = std::max(h - 1, 1) / 2.0;
  const double u = (x - (w - 1) / 2.0) / rx;
  const double v = (y - (h - 1) / 2.0) / ry;
  switch (style) {
    case 0:  // filled ellipse
      return u * u + v * v <= 1.0;
    case 1:  // ring
      return u * u + v * v <= 1.0 && u * u + v * v >= 0.30;
    case 2: {  // rectangle frame
      const int border = std::max(2, static_cast<int>(std::lround(0.2 * std::min(w, h))));
      return x < border || x >= w - border || y < border || y >= h - border;
    }
    case 3: {  // diagonal cross
      const double t = std::max(1.5, 0.11 * std::min(w, h));
      const double len = std::hypot(w - 1.0, h - 1.0);
      const double d1 = std::abs(x * (h - 1.0) - y * (w - 1.0)) / len;
      const double d2 = std::abs((w - 1.0 - x) * (h - 1.0) - y * (w - 1.0)) / len;
      return d1 <= t || d2 <= t;
    }
    default:
      return false;
  }
}

struct PixelBox {
  int x0, y0, x1, y1;  // inclusive
  bool overlaps(const PixelBox& o, int margin) const {
    return !(x1 + margin < o.x0 - margin || o.x1 + margin < x0 - margin ||
             y1 + margin < o.y0 - margin || o.y1 + margin < y0 - margin);
  }
};

std::string zero_pad(int v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) {
    s.insert(s.begin(), '0');
  }
  return s;
}

}  // namespace

DatasetIndex synth_generate(int n_images, int image_size, std::uint64_t seed,
                            const std::filesystem::path& out_dir) {
  if (n_images < 0) {
    throw InvalidInputError("number of images must be non-negative");
  }
  if (n_images > 0 && image_size < 32) {
    throw InvalidInputError("image size too small for glyphs (need >= 32)");
  }

  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "labels");

  const int smin = std::max(10, static_cast<int>(std::lround(image_size / 5.0)));
  const int smax =
      std::max(smin + 2, static_cast<int>(std::lround(image_size / 2.8)));
  const int margin = 2;

  Rng rng(seed);
  std::string csv = "image_path,patient_id,gender,label_path\n";

  for (int img = 0; img < n_images; ++img) {
    Tensor canvas(1, image_size, image_size);
    for (int y = 0; y < image_size; ++y) {
      for (int x = 0; x < image_size; ++x) {
        canvas.at(0, y, x) = 0.05 + 0.10 * (static_cast<double>(y) / (image_size - 1)) +
                             rng.uniform(0.0, 0.08);
      }
    }

    const int n_glyphs = 1 + rng.uniform_int(0, 1);
    std::vector<PixelBox> placed;
    std::vector<Annotation> annotations;

    for (int g = 0; g < n_glyphs; ++g) {
      for (int attempt = 0; attempt < 60; ++attempt) {
        const int style = rng.uniform_int(0, 3);
        const int gw = rng.uniform_int(smin, smax);
        const int gh = std::clamp(
            static_cast<int>(std::lround(gw * rng.uniform(0.8, 1.25))), smin, smax);
        if (image_size - 2 * margin - gw < 0 || image_size - 2 * margin - gh < 0) {
          continue;
        }
        const int x0 = rng.uniform_int(margin, image_size - margin - gw);
        const int y0 = rng.uniform_int(margin, image_size - margin - gh);

        // rasterize locally, then take the exact pixel extent
        std::vector<std::uint8_t> mask(static_cast<std::size_t>(gw) * gh, 0);
        int bx0 = gw, by0 = gh, bx1 = -1, by1 = -1;
        for (int y = 0; y < gh; ++y) {
          for (int x = 0; x < gw; ++x) {
            if (glyph_pixel(style, x, y, gw, gh)) {
              mask[static_cast<std::size_t>(y) * gw + x] = 1;
              bx0 = std::min(bx0, x);
              by0 = std::min(by0, y);
              bx1 = std::max(bx1, x);
              by1 = std::max(by1, y);
            }
          }
        }
        if (bx1 < 0) {
          continue;
        }
        const PixelBox bbox{x0 + bx0, y0 + by0, x0 + bx1, y0 + by1};
        bool collides = false;
        for (const PixelBox& p : placed) {
          if (bbox.overlaps(p, 4)) {
            collides = true;
            break;
          }
        }
        if (collides) {
          continue;
        }

        for (int y = 0; y < gh; ++y) {
          for (int x = 0; x < gw; ++x) {
            if (mask[static_cast<std::size_t>(y) * gw + x]) {
              canvas.at(0, y0 + y, x0 + x) = 0.60 + rng.uniform(0.0, 0.35);
            }
          }
        }
        placed.push_back(bbox);

        const Box abs{static_cast<double>(bbox.x0), static_cast<double>(bbox.y0),
                      static_cast<double>(bbox.x1 + 1),
                      static_cast<double>(bbox.y1 + 1)};
        annotations.push_back(
            Annotation{style, abs_to_norm(abs, image_size, image_size)});
        break;
      }
    }

    const std::string stem = "img_" + zero_pad(img, 5);
    const std::string image_rel = "images/" + stem + ".pgm";
    const std::string label_rel = "labels/" + stem + ".txt";
    write_file_atomic(out_dir / image_rel, write_pgm(canvas));
    write_file_atomic(out_dir / label_rel, write_labels(annotations));

    const int patient = img / 2;
    const Gender gender = patient % 2 == 0 ? Gender::female : Gender::male;
    csv += image_rel + ",p" + zero_pad(patient, 4) + "," +
           std::string(to_string(gender)) + "," + label_rel + "\n";
  }

  write_file_atomic(out_dir / "index.csv", csv);
  return parse_index(csv, out_dir);
}

}  // namespace kneedet
