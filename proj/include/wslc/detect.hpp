#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "wslc/box.hpp"
#include "wslc/image.hpp"
#include "wslc/localize.hpp"
#include "wslc/nn.hpp"

namespace wslc {

struct LinearSVM {
  Eigen::VectorXd w;
  double b = 0;
  double C = 1;
};

struct SvmOptions {
  double C = 1.0;
  int epochs = 30;
  std::uint64_t seed = 0;

  void validate() const;
};

// 1/2 |w|^2 + C sum hinge(y (w.x + b)).
double svm_objective(const LinearSVM& svm, std::span<const Eigen::VectorXd> pos, std::span<const Eigen::VectorXd> neg);

// Stochastic subgradient steps 1/(lambda t), lambda = 1/(C n), one fixed shuffle
// per epoch. The bias is an extra constant feature during the updates. The
// returned model is the best one seen at an epoch boundary (start included), so
// the objective never goes up. objective_log gets that best-so-far value per
// checkpoint, starting with the zero model.
LinearSVM svm_train(std::span<const Eigen::VectorXd> pos, std::span<const Eigen::VectorXd> neg,
                    const SvmOptions& opts, std::vector<double>* objective_log = nullptr);

double svm_score(const LinearSVM& svm, const Eigen::VectorXd& x);

struct Detection {
  int image_id = 0;
  int cls = 0;
  Box box;  // score is the SVM score

  friend bool operator==(const Detection&, const Detection&) = default;
};

// Greedy by descending score (stable); drops any box with IoU > iou_thresh against a kept one.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_thresh);

// v / |v|; zero vectors come back unchanged with *was_zero set.
Eigen::VectorXd l2_normalize(const Eigen::VectorXd& v, bool* was_zero = nullptr);

// L2-normalized embeddings of the box crops (bilinear, no context), one per row.
std::vector<Eigen::VectorXd> box_features(const Model& model, const Image& image, std::span<const Box> boxes);
std::vector<Eigen::VectorXd> image_features(const Model& model, std::span<const Image> crops);

struct DetectParams {
  int max_proposals = 8;  // more windows mostly add object parts that outscore the whole
  double nms_thresh = 0.3;
  ProposalParams proposals;

  void validate() const;
};

// svms maps class id -> detector. Output ordered by descending score, then class, then position.
std::vector<Detection> detect(const Model& model, const std::map<int, LinearSVM>& svms, const Image& image,
                              int image_id, const DetectParams& params);

// count random crops of background-only images (the generator's clutter),
// each side 1/4 to 3/4 of the image. Crop i depends only on (seed, i).
std::vector<Image> random_negative_crops(int count, int image_size, std::uint64_t seed);

// An image with the boxes known to hold the class.
struct PositiveImage {
  Image image;
  std::vector<Box> boxes;
};

inline constexpr int kNegativesPerPositive = 10;
inline constexpr int kPartNegativesPerImage = 8;
inline constexpr double kPartNegativeIou = 0.3;

// Up to count random boxes of the image with IoU < kPartNegativeIou against every
// positive; mostly object parts and surrounding clutter.
std::vector<Box> part_negative_boxes(const PositiveImage& im, int count, std::uint64_t seed);

// One detector per class. Positives are the box crops. Negatives are the first
// 10 x (positive count) background crops plus part negatives from the positive images.
std::map<int, LinearSVM> train_detectors(const Model& model, const std::map<int, std::vector<PositiveImage>>& positives,
                                         std::span<const Image> background, const SvmOptions& opts);

struct PRCurve {
  std::vector<double> precision;
  std::vector<double> recall;
  double ap = 0;
};

// ranked must be in descending score order. gt maps image id -> boxes.
// A detection is a TP when its best-IoU unmatched box in the same image
// reaches iou_thresh. All-point interpolated AP.
PRCurve average_precision(std::span<const Detection> ranked, const std::map<int, std::vector<Box>>& gt,
                          double iou_thresh = 0.5);

double mean_ap(std::span<const double> aps);

struct GroundTruth {
  int image_id = 0;
  int cls = 0;
  Box box;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct ClassEval {
  int cls = 0;
  double ap = 0;
  long num_gt = 0;
  long num_det = 0;
};

// Per class with at least one ground-truth box, in class order.
std::vector<ClassEval> evaluate_detections(std::span<const Detection> detections, std::span<const GroundTruth> gt,
                                           double iou_thresh = 0.5);

// One-vs-rest SVMs on L2-normalized embeddings; argmax score (ties to the lower class).
std::vector<LinearSVM> train_one_vs_rest(std::span<const Eigen::VectorXd> x, std::span<const int> labels,
                                         int num_classes, const SvmOptions& opts);
int predict_one_vs_rest(std::span<const LinearSVM> svms, const Eigen::VectorXd& x);

// Held-out accuracy of the one-vs-rest probe. Every class in [0, max label]
// must appear in the training split.
double linear_probe(std::span<const Eigen::VectorXd> train_x, std::span<const int> train_y,
                    std::span<const Eigen::VectorXd> test_x, std::span<const int> test_y,
                    const SvmOptions& opts = {});

// image_id,class,x1,y1,x2,y2,score
void write_detections(const std::filesystem::path& path, std::span<const Detection> detections);
std::vector<Detection> read_detections(const std::filesystem::path& path);

// image_id,class,x1,y1,x2,y2
void write_ground_truth(const std::filesystem::path& path, std::span<const GroundTruth> gt);
std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path);

// class,AP,num_gt,num_det with a closing mAP row. Class names are used when given.
void write_eval(const std::filesystem::path& path, std::span<const ClassEval> rows,
                std::span<const std::string> class_names = {});

}  // namespace wslc
