#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "kneedet/geometry.hpp"

namespace kneedet {

// The four knee joint area classes, ids 0..3.
inline constexpr int kClassCount = 4;
const std::array<std::string, 4>& class_names();
int class_id_from_name(std::string_view name);  // -1 when unknown

enum class Gender { female, male, unknown };
std::string_view to_string(Gender g);
Gender gender_from_string(std::string_view s);  // throws ParseError

struct Annotation {
  int class_id = 0;
  NormBox box;
  bool operator==(const Annotation&) const = default;
};

// Label file: one `class_id cx cy w h` line per object, normalized values.
std::vector<Annotation> read_labels(std::string_view text);
std::string write_labels(const std::vector<Annotation>& annotations);

struct ImageRecord {
  std::string image_path;
  std::string patient_id;
  Gender gender = Gender::unknown;
  std::string label_path;
  std::vector<Annotation> annotations;
};

struct DatasetIndex {
  std::filesystem::path root;  // directory paths are relative to
  std::vector<ImageRecord> records;
  std::array<std::int64_t, kClassCount> class_counts{};
  std::int64_t total_annotations() const;
};

// CSV with header `image_path,patient_id,gender,label_path`; label files
// are read and validated relative to base_dir.
DatasetIndex parse_index(std::string_view csv_text,
                         const std::filesystem::path& base_dir);
DatasetIndex load_index(const std::filesystem::path& csv_path);

struct FoldAssignment {
  int k = 0;
  std::vector<int> fold_of_record;  // parallel to index.records
  std::vector<std::vector<std::string>> fold_patients;
  std::vector<std::string> warnings;
};

// Patient-grouped, gender-stratified k-fold split. Within each gender
// stratum, patients are placed largest-first into the fold with the
// smallest stratum load (global load, then the seeded rng break ties).
FoldAssignment kfold_split(const DatasetIndex& index, int k, std::uint64_t seed);

// CSV `image_path,fold`, records in index order.
std::string write_folds_csv(const DatasetIndex& index, const FoldAssignment& folds);

// Synthetic desk-scale corpus: grayscale PGM images with 1-2 procedurally
// drawn glyphs (one glyph style per class) and exact ground-truth boxes.
// Writes images/, labels/ and index.csv under out_dir; byte-identical
// under a fixed seed.
DatasetIndex synth_generate(int n_images, int image_size, std::uint64_t seed,
                            const std::filesystem::path& out_dir);

}  // namespace kneedet
