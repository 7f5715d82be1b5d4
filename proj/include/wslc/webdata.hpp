#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wslc/box.hpp"
#include "wslc/image.hpp"

namespace wslc {

enum class Source { kEasy, kHard };
const char* source_name(Source s);
Source parse_source(const std::string& s);

enum class ShapeFamily { kRectangle, kEllipse, kTriangle, kDiamond };
enum class Texture { kSolid, kStripes };

// Visual signature of one synthetic category.
struct CategoryStyle {
  std::string name;
  ShapeFamily shape;
  int hue_band;  // 0..3, 90 degrees apart
  Texture texture;
};

// Synthetic categories. Index i gets shape (i/2)%4, texture i%2 and hue band
// ((i/2) + i/8) % 4, so pairs (2k, 2k+1) differ only in texture.
class CategorySpace {
 public:
  explicit CategorySpace(int num_categories);

  int size() const { return static_cast<int>(styles_.size()); }
  const CategoryStyle& style(int category) const;
  std::vector<std::string> names() const;

  // Off-diagonal entries proportional to the number of shared attributes
  // (shape, hue, texture); each row sums to 1 over j != i, diagonal 0.
  Eigen::MatrixXd visual_similarity() const;

 private:
  std::vector<CategoryStyle> styles_;
};

struct LabeledBox {
  int cls;
  Box box;

  friend bool operator==(const LabeledBox&, const LabeledBox&) = default;
};

// One image with its observed tag. true_label and gt_boxes are evaluation-only.
struct Sample {
  Image image;
  int observed_label = 0;
  Source source = Source::kEasy;
  int true_label = 0;
  std::vector<LabeledBox> gt_boxes;
  bool junk = false;
  std::string origin;  // file path or generator parameters
};

struct NoiseModel {
  double flip_rate = 0.0;        // rho
  double similarity_bias = 0.0;  // beta
  double junk_rate = 0.0;

  void validate() const;
  friend bool operator==(const NoiseModel&, const NoiseModel&) = default;
};

// Iconic images: one centered object (center within 5% of the image side,
// box area 40-70% of the image) on a near-uniform background.
std::vector<Sample> gen_easy(const CategorySpace& space, int category, int n, std::uint64_t seed,
                             int image_size = 32, int first_index = 0);

// Cluttered images: 1-3 off-center instances (10-50% area each), distractors
// from other categories, label flips (prob rho; to a look-alike with prob beta,
// else uniform over the other classes) and junk scenes (prob junk_rate).
std::vector<Sample> gen_hard(const CategorySpace& space, int category, int n, const NoiseModel& noise,
                             const Eigen::MatrixXd& visual_similarity, std::uint64_t seed, int image_size = 32,
                             int first_index = 0);

// Background-only cluttered image (no category instances). Used for negatives.
Image gen_background(std::uint64_t seed, int image_size);

// Re-renders a synthetic sample image from its origin string.
Image render_origin(const std::string& origin);
bool is_synthetic_origin(const std::string& origin);

struct ManifestRecord {
  std::string path_or_params;
  int observed_label = 0;
  Source source = Source::kEasy;
  int true_label = 0;
  std::vector<LabeledBox> gt_boxes;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::vector<std::string> class_names;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

DatasetManifest make_manifest(const std::vector<Sample>& samples, std::vector<std::string> class_names);

// CSV: path_or_params,observed_label,source,true_label,gt_boxes with boxes as
// "cls:x1:y1:x2:y2" joined by ';'. A leading "# classes: a,b,c" line carries names.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Loads or renders every image, resized to image_size when it differs.
std::vector<Image> materialize(const DatasetManifest& manifest, int image_size);

struct FolderLoad {
  DatasetManifest manifest;
  std::vector<std::string> warnings;
};

// One subdirectory per class (sorted by name). Optional "sources.txt" at the
// root lists "relative/path EASY|HARD"; unlisted files default to EASY.
FolderLoad load_folder(const std::filesystem::path& root);

struct Splits {
  DatasetManifest train, val, test;
};

// Stratified by true_label; each class contributes at least one record to each split.
Splits split(const DatasetManifest& manifest, const std::array<double, 3>& fractions, std::uint64_t seed);

// Training-facing view: images with observed labels only.
struct LabeledImages {
  std::vector<Image> images;
  std::vector<int> labels;
  int num_classes = 0;
};

LabeledImages training_view(const std::vector<Sample>& samples, int num_classes);
// Evaluation view: true labels; junk samples are dropped.
LabeledImages evaluation_view(const std::vector<Sample>& samples, int num_classes);

}  // namespace wslc
