#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wslc/box.hpp"
#include "wslc/curriculum.hpp"
#include "wslc/image.hpp"
#include "wslc/nn.hpp"

namespace wslc {

inline constexpr int kDefaultNeighbors = 10;
inline constexpr double kDefaultOverlap = 0.5;

// Negative mean and shrunk covariance shared by every exemplar detector.
struct NegStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;  // population covariance
  double lambda = 0;
  long n = 0;

  Eigen::MatrixXd sigma_lambda() const;
  // sigma_lambda^-1 rhs, one refinement step; throws if the residual stays above 1e-8 |rhs|.
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
  // L^-1 (x - mu) with sigma_lambda = L L^T.
  Eigen::VectorXd whiten(const Eigen::VectorXd& x) const;

  Eigen::LLT<Eigen::MatrixXd> llt;
};

// 0.1 trace(sigma) / dim, floored at 1e-6.
double default_shrinkage(const Eigen::MatrixXd& sigma);

// lambda <= 0 selects default_shrinkage.
NegStats neg_stats(std::span<const Eigen::VectorXd> features, double lambda);

struct ExemplarDetector {
  Eigen::VectorXd w;
  Eigen::VectorXd mu;
  int seed_id = -1;
  double b = 0;  // -w.mu, so w.x + b == w.(x - mu)

  double score(const Eigen::VectorXd& x) const { return w.dot(x) + b; }
};

ExemplarDetector elda_fit(const Eigen::VectorXd& seed_embedding, const NegStats& stats, int seed_id = -1);

struct ProposalParams {
  // Window side / image side. The larger scales cover objects up to half the image area.
  std::vector<double> scales{3.0 / 4, 5.0 / 8, 1.0 / 2, 2.0 / 5, 1.0 / 3, 1.0 / 4};
  std::vector<double> aspects{1.0, 2.0, 0.5};  // width : height
  double alpha = 1.0;                          // ring penalty
  double ring = 1.0 / 8;                       // ring width / shorter window side
  double perimeter_exponent = 1.5;             // score divided by perimeter^this; 0 keeps raw mass
  double edge_floor = 0.2;                     // edges below this fraction of the max are dropped
  double nms_iou = 0.7;
  double color_weight = 2;  // times the distance between mean RGB inside and in the ring; 0 disables

  friend bool operator==(const ProposalParams&, const ProposalParams&) = default;
};

// Gradient magnitude over all three channels, Sobel 3x3, replicate border. H x W.
Tensor edge_map(const Image& im);

// Windows ranked by interior edge mass minus alpha times the edge mass in the
// ring just outside the box, over perimeter^perimeter_exponent; ties to smaller
// area then position. NMS, top max_n.
std::vector<Box> propose(const Image& im, int max_n, const ProposalParams& params = {});

struct Candidate {
  int image_id;
  Box box;
  Eigen::VectorXd embedding;
};

struct Neighbor {
  std::size_t index;  // into the candidate list
  double score;
};

// Best box per image, then the top k images by E-LDA score (ties by candidate order).
std::vector<Neighbor> knn_propagate(const ExemplarDetector& det, std::span<const Candidate> candidates,
                                    int k = kDefaultNeighbors);

struct Member {
  int image_id;
  Box box;
  Eigen::VectorXd embedding;

  bool same_place(const Member& o) const { return image_id == o.image_id && box.same_extent(o.box); }
};

struct Subcategory {
  std::vector<Member> members;
  std::vector<int> seed_ids;
  double density = 1.0;
};

// Mean pairwise cosine similarity; 1 for a singleton.
double cluster_density(std::span<const Member> members);
// Mean cosine similarity over all cross pairs.
double cluster_affinity(std::span<const Member> a, std::span<const Member> b);

Subcategory make_subcategory(std::vector<Member> members, std::vector<int> seed_ids);

// Greedy bottom-up: merge the most affine pair while its affinity >= tau.
std::vector<Subcategory> merge_subcategories(std::vector<Subcategory> sets, double tau = 0.5);

// Linear-interpolated percentile (0..100) of values.
double percentile(std::vector<double> values, double pct);

std::vector<Subcategory> purge_noise(const std::vector<Subcategory>& clusters, int min_members = 3,
                                     double density_percentile = 10);

struct ImageBox {
  int image_id;
  Box box;
  friend bool operator==(const ImageBox& a, const ImageBox& b) {
    return a.image_id == b.image_id && a.box.same_extent(b.box);
  }
};

// Inputs first, then every proposal with IoU >= threshold against a positive of its image.
std::vector<ImageBox> edgebox_augment(std::span<const ImageBox> positives,
                                      const std::map<int, std::vector<Box>>& proposals,
                                      double threshold = kDefaultOverlap);

// Unordered class pairs.
using Whitelist = std::set<std::pair<int, int>>;
Whitelist make_whitelist(std::span<const std::pair<int, int>> pairs);

// Graph-row neighbors of category that are whitelisted with it, by descending weight.
std::vector<int> category_expand(const RelationshipGraph& graph, int category, const Whitelist& whitelist);

// "categoryA categoryB" per line, names resolved against class_names; '#' starts a comment.
Whitelist read_whitelist(const std::filesystem::path& path, std::span<const std::string> class_names);

struct SubcategoryRecord {
  int cluster_id;
  int image_id;
  Box box;
  friend bool operator==(const SubcategoryRecord&, const SubcategoryRecord&) = default;
};

// "cluster_id image_id x1 y1 x2 y2 score" per member.
void write_subcategories(const std::filesystem::path& path, std::span<const SubcategoryRecord> records);
std::vector<SubcategoryRecord> read_subcategories(const std::filesystem::path& path);

// N x embed_dim, images resized to the model input.
Eigen::MatrixXd embed_images(const Model& model, std::span<const Image> images);

// Embeddings of the top max_n proposal crops of every image, in image order.
std::vector<Eigen::VectorXd> proposal_features(const Model& model, std::span<const Image> images, int max_n,
                                               const ProposalParams& params = {});

struct LocalizeParams {
  int k = kDefaultNeighbors;
  double tau = 0.5;
  int min_members = 3;
  double density_percentile = 10;
  int max_proposals = 3;  // per pool image; few, so objectness screens out object parts
  double lambda = 0;      // <= 0: default shrinkage
  ProposalParams proposals;

  void validate() const;
  friend bool operator==(const LocalizeParams&, const LocalizeParams&) = default;
};

struct CategoryLocalization {
  std::vector<Subcategory> neighbor_sets;  // one per seed
  std::vector<Subcategory> merged;
  std::vector<Subcategory> retained;
  std::vector<Candidate> candidates;  // every proposal, raw embeddings
};

// Seeds are whole easy images; candidates are proposals on the images of the
// category's noisy pool. Member embeddings are whitened.
CategoryLocalization localize_category(const Model& model, const NegStats& stats, std::span<const Image> seeds,
                                       std::span<const Image> pool, std::span<const int> pool_ids,
                                       const LocalizeParams& params);

// Retained members, deduplicated by (image, box).
std::vector<ImageBox> localized_boxes(const CategoryLocalization& loc);

}  // namespace wslc
