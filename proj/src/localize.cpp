#include "wslc/localize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "wslc/parallel.hpp"

namespace wslc {

// ---------------------------------------------------------------------------
// E-LDA

Eigen::MatrixXd NegStats::sigma_lambda() const {
  return sigma + lambda * Eigen::MatrixXd::Identity(sigma.rows(), sigma.cols());
}

Eigen::VectorXd NegStats::solve(const Eigen::VectorXd& rhs) const {
  if (rhs.size() != mu.size())
    throw std::invalid_argument("dimension mismatch: " + std::to_string(rhs.size()) + " vs " +
                                std::to_string(mu.size()));
  if (llt.info() != Eigen::Success) throw std::runtime_error("shrunk covariance is not positive definite");
  const Eigen::MatrixXd a = sigma_lambda();
  Eigen::VectorXd w = llt.solve(rhs);
  w += llt.solve(rhs - a * w);
  const double bound = 1e-8 * rhs.norm();
  if (!w.allFinite() || (a * w - rhs).norm() > bound)
    throw std::runtime_error("E-LDA solve failed to reach the residual bound");
  return w;
}

Eigen::VectorXd NegStats::whiten(const Eigen::VectorXd& x) const {
  return llt.matrixL().solve(x - mu);
}

double default_shrinkage(const Eigen::MatrixXd& sigma) {
  const double t = sigma.rows() > 0 ? 0.1 * sigma.trace() / static_cast<double>(sigma.rows()) : 0.0;
  return std::max(t, 1e-6);
}

NegStats neg_stats(std::span<const Eigen::VectorXd> features, double lambda) {
  if (features.size() < 2) throw std::invalid_argument("negative statistics need at least 2 features");
  const auto dim = features[0].size();
  NegStats s;
  s.n = static_cast<long>(features.size());
  s.mu = Eigen::VectorXd::Zero(dim);
  for (const auto& f : features) {
    if (f.size() != dim) throw std::invalid_argument("features differ in dimension");
    s.mu += f;
  }
  s.mu /= static_cast<double>(s.n);
  s.sigma = Eigen::MatrixXd::Zero(dim, dim);
  for (const auto& f : features) {
    const Eigen::VectorXd d = f - s.mu;
    s.sigma.selfadjointView<Eigen::Lower>().rankUpdate(d);
  }
  s.sigma = s.sigma.selfadjointView<Eigen::Lower>();
  s.sigma /= static_cast<double>(s.n);
  s.lambda = lambda > 0 ? lambda : default_shrinkage(s.sigma);
  s.llt.compute(s.sigma_lambda());
  if (s.llt.info() != Eigen::Success) throw std::runtime_error("shrunk covariance is not positive definite");
  return s;
}

ExemplarDetector elda_fit(const Eigen::VectorXd& seed_embedding, const NegStats& stats, int seed_id) {
  if (seed_embedding.size() != stats.mu.size()) throw std::invalid_argument("seed and negative stats differ in dimension");
  ExemplarDetector d;
  d.w = stats.solve(seed_embedding - stats.mu);
  d.mu = stats.mu;
  d.seed_id = seed_id;
  d.b = -d.w.dot(stats.mu);
  return d;
}

// ---------------------------------------------------------------------------
// Proposals

Tensor edge_map(const Image& im) {
  const int h = image_height(im), w = image_width(im);
  Tensor out({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  auto at = [&](int y, int x, int c) {
    return pixel(im, std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1), c);
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double m = 0;
      for (int c = 0; c < 3; ++c) {
        const double gx = (at(y - 1, x + 1, c) + 2 * at(y, x + 1, c) + at(y + 1, x + 1, c)) -
                          (at(y - 1, x - 1, c) + 2 * at(y, x - 1, c) + at(y + 1, x - 1, c));
        const double gy = (at(y + 1, x - 1, c) + 2 * at(y + 1, x, c) + at(y + 1, x + 1, c)) -
                          (at(y - 1, x - 1, c) + 2 * at(y - 1, x, c) + at(y - 1, x + 1, c));
        m += gx * gx + gy * gy;
      }
      out(y, x) = static_cast<float>(std::sqrt(m));
    }
  return out;
}

namespace {

class Integral {
 public:
  Integral(const Tensor& e, double floor) : h_(static_cast<int>(e.dim(0))), w_(static_cast<int>(e.dim(1))) {
    float mx = 0;
    for (float v : e.values()) mx = std::max(mx, v);
    const double cut = floor * mx;
    s_.assign(static_cast<std::size_t>((h_ + 1) * (w_ + 1)), 0.0);
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) {
        const double v = e(y, x) >= cut && mx > 0 ? e(y, x) : 0.0;
        s_[idx(y + 1, x + 1)] = v + s_[idx(y, x + 1)] + s_[idx(y + 1, x)] - s_[idx(y, x)];
      }
  }
  // Sum over [x1, x2) x [y1, y2), clipped to the image.
  double sum(int x1, int y1, int x2, int y2) const {
    x1 = std::clamp(x1, 0, w_);
    x2 = std::clamp(x2, 0, w_);
    y1 = std::clamp(y1, 0, h_);
    y2 = std::clamp(y2, 0, h_);
    if (x2 <= x1 || y2 <= y1) return 0.0;
    return s_[idx(y2, x2)] - s_[idx(y1, x2)] - s_[idx(y2, x1)] + s_[idx(y1, x1)];
  }

 private:
  std::size_t idx(int y, int x) const { return static_cast<std::size_t>(y * (w_ + 1) + x); }
  int h_, w_;
  std::vector<double> s_;
};

std::vector<int> positions(int extent, int window, int stride) {
  std::vector<int> out;
  for (int p = 0; p + window <= extent; p += stride) out.push_back(p);
  if (out.empty() || out.back() != extent - window) out.push_back(extent - window);
  return out;
}

double area_clipped(int x1, int y1, int x2, int y2, int w, int h) {
  x1 = std::clamp(x1, 0, w);
  x2 = std::clamp(x2, 0, w);
  y1 = std::clamp(y1, 0, h);
  y2 = std::clamp(y2, 0, h);
  return x2 > x1 && y2 > y1 ? static_cast<double>(x2 - x1) * (y2 - y1) : 0.0;
}

}  // namespace

std::vector<Box> propose(const Image& im, int max_n, const ProposalParams& params) {
  if (max_n < 1) throw std::invalid_argument("max_n must be >= 1");
  const int h = image_height(im), w = image_width(im);
  if (h < 2 || w < 2) throw std::invalid_argument("image too small for proposals");
  const Integral integral(edge_map(im), params.edge_floor);
  std::vector<Integral> color;
  if (params.color_weight != 0)
    for (int c = 0; c < 3; ++c) {
      Tensor ch({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) ch(y, x) = pixel(im, y, x, c);
      color.emplace_back(ch, 0.0);
    }

  std::vector<Box> windows;
  for (double s : params.scales)
    for (double a : params.aspects) {
      const int bw = std::clamp(static_cast<int>(std::lround(s * w * std::sqrt(a))), 2, w);
      const int bh = std::clamp(static_cast<int>(std::lround(s * h / std::sqrt(a))), 2, h);
      const int stride = std::max(1, static_cast<int>(std::lround(s * std::min(w, h) / 8.0)));
      const int ring = std::max(1, static_cast<int>(std::lround(params.ring * std::min(bw, bh))));
      for (int y : positions(h, bh, stride))
        for (int x : positions(w, bw, stride)) {
          const double inner = integral.sum(x, y, x + bw, y + bh);
          const double outer = integral.sum(x - ring, y - ring, x + bw + ring, y + bh + ring) - inner;
          double sc = (inner - params.alpha * outer) / std::pow(2.0 * (bw + bh), params.perimeter_exponent);
          if (!color.empty()) {
            const double ain = static_cast<double>(bw) * bh;
            const double aring = area_clipped(x - ring, y - ring, x + bw + ring, y + bh + ring, w, h) - ain;
            if (aring > 0) {
              double d2 = 0;
              for (const auto& ci : color) {
                const double in = ci.sum(x, y, x + bw, y + bh);
                const double out = ci.sum(x - ring, y - ring, x + bw + ring, y + bh + ring) - in;
                d2 += std::pow(in / ain - out / aring, 2);
              }
              sc += params.color_weight * std::sqrt(d2);
            }
          }
          windows.push_back({x, y, x + bw, y + bh, sc});
        }
    }
  std::sort(windows.begin(), windows.end(), [](const Box& a, const Box& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.area() != b.area()) return a.area() < b.area();
    if (a.y1 != b.y1) return a.y1 < b.y1;
    if (a.x1 != b.x1) return a.x1 < b.x1;
    return a.width() < b.width();
  });
  std::vector<Box> kept;
  for (const auto& b : windows) {
    if (static_cast<int>(kept.size()) == max_n) break;
    if (std::none_of(kept.begin(), kept.end(), [&](const Box& k) { return iou(k, b) > params.nms_iou; }))
      kept.push_back(b);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Neighbors, merging, purging

std::vector<Neighbor> knn_propagate(const ExemplarDetector& det, std::span<const Candidate> candidates, int k) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  std::map<int, Neighbor> best;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].embedding.size() != det.w.size()) throw std::invalid_argument("candidate dimension mismatch");
    const double s = det.score(candidates[i].embedding);
    auto [it, fresh] = best.try_emplace(candidates[i].image_id, Neighbor{i, s});
    if (!fresh && s > it->second.score) it->second = {i, s};
  }
  std::vector<Neighbor> out;
  out.reserve(best.size());
  for (const auto& [id, n] : best) out.push_back(n);
  std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.score != b.score ? a.score > b.score : a.index < b.index;
  });
  if (out.size() > static_cast<std::size_t>(k)) out.resize(static_cast<std::size_t>(k));
  return out;
}

namespace {

Eigen::MatrixXd unit_rows(std::span<const Member> members) {
  if (members.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(members.size()), members[0].embedding.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    const double n = members[i].embedding.norm();
    m.row(static_cast<Eigen::Index>(i)) = n > 0 ? Eigen::VectorXd(members[i].embedding / n) : members[i].embedding;
  }
  return m;
}

}  // namespace

double cluster_density(std::span<const Member> members) {
  const auto n = static_cast<Eigen::Index>(members.size());
  if (n <= 1) return 1.0;
  const Eigen::MatrixXd u = unit_rows(members);
  const Eigen::MatrixXd g = u * u.transpose();
  return (g.sum() - g.trace()) / static_cast<double>(n * (n - 1));
}

double cluster_affinity(std::span<const Member> a, std::span<const Member> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("affinity of an empty set");
  return (unit_rows(a) * unit_rows(b).transpose()).mean();
}

Subcategory make_subcategory(std::vector<Member> members, std::vector<int> seed_ids) {
  Subcategory s;
  for (auto& m : members)
    if (std::none_of(s.members.begin(), s.members.end(), [&](const Member& o) { return o.same_place(m); }))
      s.members.push_back(std::move(m));
  std::sort(seed_ids.begin(), seed_ids.end());
  seed_ids.erase(std::unique(seed_ids.begin(), seed_ids.end()), seed_ids.end());
  s.seed_ids = std::move(seed_ids);
  s.density = cluster_density(s.members);
  return s;
}

std::vector<Subcategory> merge_subcategories(std::vector<Subcategory> sets, double tau) {
  for (const auto& s : sets)
    if (s.members.empty()) throw std::invalid_argument("cannot merge an empty neighbor set");
  const std::size_t n = sets.size();
  if (n < 2) return sets;
  std::vector<bool> alive(n, true);
  Eigen::MatrixXd aff = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n),
                                                  -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      aff(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cluster_affinity(sets[i].members, sets[j].members);
  while (true) {
    double top = -std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!alive[j]) continue;
        const double a = aff(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        if (a > top) {
          top = a;
          bi = i;
          bj = j;
        }
      }
    }
    if (!(top >= tau)) break;
    auto members = std::move(sets[bi].members);
    members.insert(members.end(), sets[bj].members.begin(), sets[bj].members.end());
    auto seeds = std::move(sets[bi].seed_ids);
    seeds.insert(seeds.end(), sets[bj].seed_ids.begin(), sets[bj].seed_ids.end());
    sets[bi] = make_subcategory(std::move(members), std::move(seeds));
    alive[bj] = false;
    for (std::size_t o = 0; o < n; ++o) {
      if (!alive[o] || o == bi) continue;
      const double a = cluster_affinity(sets[bi].members, sets[o].members);
      aff(static_cast<Eigen::Index>(std::min(o, bi)), static_cast<Eigen::Index>(std::max(o, bi))) = a;
    }
  }
  std::vector<Subcategory> out;
  for (std::size_t i = 0; i < n; ++i)
    if (alive[i]) out.push_back(std::move(sets[i]));
  return out;
}

double percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw std::invalid_argument("percentile of nothing");
  if (pct < 0 || pct > 100) throw std::invalid_argument("percentile must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<Subcategory> purge_noise(const std::vector<Subcategory>& clusters, int min_members,
                                     double density_percentile) {
  if (clusters.empty()) return {};
  std::vector<double> densities;
  for (const auto& c : clusters) {
    if (!std::isfinite(c.density)) throw std::invalid_argument("cluster density is not finite");
    densities.push_back(c.density);
  }
  const double cut = percentile(densities, density_percentile);
  std::vector<Subcategory> out;
  for (const auto& c : clusters)
    if (static_cast<int>(c.members.size()) >= min_members && c.density >= cut) out.push_back(c);
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

std::vector<ImageBox> edgebox_augment(std::span<const ImageBox> positives,
                                      const std::map<int, std::vector<Box>>& proposals, double threshold) {
  if (!(threshold > 0 && threshold <= 1)) throw std::invalid_argument("overlap threshold must lie in (0, 1]");
  std::vector<ImageBox> out;
  auto add = [&](const ImageBox& ib) {
    if (std::find(out.begin(), out.end(), ib) == out.end()) out.push_back(ib);
  };
  std::map<int, std::vector<Box>> by_image;
  for (const auto& p : positives) {
    add(p);
    by_image[p.image_id].push_back(p.box);
  }
  for (const auto& [id, boxes] : by_image) {
    const auto it = proposals.find(id);
    if (it == proposals.end()) continue;
    for (const auto& prop : it->second)
      if (std::any_of(boxes.begin(), boxes.end(), [&](const Box& b) { return iou(prop, b) >= threshold; }))
        add({id, prop});
  }
  return out;
}

Whitelist make_whitelist(std::span<const std::pair<int, int>> pairs) {
  Whitelist w;
  for (auto [a, b] : pairs) w.insert({std::min(a, b), std::max(a, b)});
  return w;
}

std::vector<int> category_expand(const RelationshipGraph& graph, int category, const Whitelist& whitelist) {
  if (category < 0 || category >= graph.num_classes()) throw std::invalid_argument("category out of range");
  std::vector<RelationshipGraph::Entry> hits;
  for (const auto& e : graph.row(category))
    if (e.cls != category && whitelist.count({std::min(e.cls, category), std::max(e.cls, category)}))
      hits.push_back(e);
  std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.weight > b.weight; });
  std::vector<int> out;
  for (const auto& e : hits) out.push_back(e.cls);
  return out;
}

Whitelist read_whitelist(const std::filesystem::path& path, std::span<const std::string> class_names) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open whitelist " + path.string());
  auto index_of = [&](const std::string& name, int line) {
    const auto it = std::find(class_names.begin(), class_names.end(), name);
    if (it == class_names.end())
      throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": unknown category '" + name + "'");
    return static_cast<int>(it - class_names.begin());
  };
  std::vector<std::pair<int, int>> pairs;
  std::string line;
  for (int no = 1; std::getline(in, line); ++no) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::string a, b, extra;
    if (!(ss >> a)) continue;
    if (!(ss >> b) || (ss >> extra))
      throw std::runtime_error(path.string() + ":" + std::to_string(no) + ": expected two category names");
    pairs.emplace_back(index_of(a, no), index_of(b, no));
  }
  return make_whitelist(pairs);
}

void write_subcategories(const std::filesystem::path& path, std::span<const SubcategoryRecord> records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.17g", r.box.score);
    out << r.cluster_id << ' ' << r.image_id << ' ' << r.box.x1 << ' ' << r.box.y1 << ' ' << r.box.x2 << ' '
        << r.box.y2 << ' ' << buf << '\n';
  }
}

std::vector<SubcategoryRecord> read_subcategories(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<SubcategoryRecord> out;
  std::string line;
  for (int no = 1; std::getline(in, line); ++no) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    SubcategoryRecord r{};
    std::string extra;
    if (!(ss >> r.cluster_id >> r.image_id >> r.box.x1 >> r.box.y1 >> r.box.x2 >> r.box.y2 >> r.box.score) ||
        (ss >> extra) || r.box.x2 <= r.box.x1 || r.box.y2 <= r.box.y1)
      throw std::runtime_error(path.string() + ":" + std::to_string(no) + ": malformed subcategory line");
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

Eigen::MatrixXd embed_images(const Model& model, std::span<const Image> images) {
  constexpr std::size_t kChunk = 256;
  const int e = model.spec.embed_dim;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), e);
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto part = images.subspan(start, std::min(kChunk, images.size() - start));
    const auto emb = embed(model, to_model_batch(part, model.spec.in_height, model.spec.in_width));
    for (std::size_t i = 0; i < part.size(); ++i)
      for (int j = 0; j < e; ++j) out(static_cast<Eigen::Index>(start + i), j) = emb(i, j);
  }
  return out;
}

std::vector<Eigen::VectorXd> proposal_features(const Model& model, std::span<const Image> images, int max_n,
                                               const ProposalParams& params) {
  std::vector<std::vector<Box>> boxes(images.size());
  parallel_for(images.size(), [&](std::size_t i) { boxes[i] = propose(images[i], max_n, params); });
  std::vector<Image> crops;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (const auto& b : boxes[i]) crops.push_back(crop_resize(images[i], b, model.spec.in_height, model.spec.in_width));
  const Eigen::MatrixXd emb = embed_images(model, crops);
  std::vector<Eigen::VectorXd> out;
  out.reserve(crops.size());
  for (Eigen::Index i = 0; i < emb.rows(); ++i) out.push_back(emb.row(i).transpose());
  return out;
}

void LocalizeParams::validate() const {
  if (k < 1) throw std::invalid_argument("localize.k must be >= 1");
  if (!(tau >= -1 && tau <= 1)) throw std::invalid_argument("localize.tau must lie in [-1, 1]");
  if (min_members < 1) throw std::invalid_argument("localize.min_members must be >= 1");
  if (!(density_percentile >= 0 && density_percentile <= 100))
    throw std::invalid_argument("localize.density_percentile must lie in [0, 100]");
  if (max_proposals < 1) throw std::invalid_argument("localize.max_proposals must be >= 1");
  if (!(lambda >= 0)) throw std::invalid_argument("localize.lambda must be >= 0");
  if (proposals.scales.empty() || proposals.aspects.empty())
    throw std::invalid_argument("proposal scales and aspects must be nonempty");
  for (double s : proposals.scales)
    if (!(s > 0 && s <= 1)) throw std::invalid_argument("proposal scales must lie in (0, 1]");
  for (double a : proposals.aspects)
    if (!(a > 0)) throw std::invalid_argument("proposal aspects must be positive");
  if (!(proposals.nms_iou > 0 && proposals.nms_iou <= 1)) throw std::invalid_argument("proposal nms_iou must lie in (0, 1]");
  if (!(proposals.ring > 0)) throw std::invalid_argument("proposal ring must be positive");
  if (!(proposals.alpha >= 0)) throw std::invalid_argument("proposal alpha must be >= 0");
  if (!(proposals.perimeter_exponent >= 0)) throw std::invalid_argument("proposal perimeter_exponent must be >= 0");
  if (!(proposals.edge_floor >= 0 && proposals.edge_floor < 1))
    throw std::invalid_argument("proposal edge_floor must lie in [0, 1)");
}

CategoryLocalization localize_category(const Model& model, const NegStats& stats, std::span<const Image> seeds,
                                       std::span<const Image> pool, std::span<const int> pool_ids,
                                       const LocalizeParams& params) {
  params.validate();
  if (pool.size() != pool_ids.size()) throw std::invalid_argument("one id per pool image required");
  CategoryLocalization loc;
  if (seeds.empty() || pool.empty()) return loc;

  std::vector<std::vector<Box>> boxes(pool.size());
  parallel_for(pool.size(), [&](std::size_t i) { boxes[i] = propose(pool[i], params.max_proposals, params.proposals); });
  std::vector<Image> crops;
  for (std::size_t i = 0; i < pool.size(); ++i)
    for (const auto& b : boxes[i]) {
      crops.push_back(crop_resize(pool[i], b, model.spec.in_height, model.spec.in_width));
      loc.candidates.push_back({pool_ids[i], b, {}});
    }
  const Eigen::MatrixXd emb = embed_images(model, crops);
  crops.clear();
  for (std::size_t i = 0; i < loc.candidates.size(); ++i) loc.candidates[i].embedding = emb.row(static_cast<Eigen::Index>(i)).transpose();

  const Eigen::MatrixXd seed_emb = embed_images(model, seeds);
  loc.neighbor_sets.resize(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t s) {
    const auto det = elda_fit(seed_emb.row(static_cast<Eigen::Index>(s)).transpose(), stats, static_cast<int>(s));
    std::vector<Member> members;
    for (const auto& n : knn_propagate(det, loc.candidates, params.k)) {
      const auto& c = loc.candidates[n.index];
      Box b = c.box;
      b.score = n.score;
      members.push_back({c.image_id, b, stats.whiten(c.embedding)});
    }
    loc.neighbor_sets[s] = make_subcategory(std::move(members), {static_cast<int>(s)});
  });
  loc.merged = merge_subcategories(loc.neighbor_sets, params.tau);
  loc.retained = purge_noise(loc.merged, params.min_members, params.density_percentile);
  return loc;
}

std::vector<ImageBox> localized_boxes(const CategoryLocalization& loc) {
  std::vector<ImageBox> out;
  for (const auto& sub : loc.retained)
    for (const auto& m : sub.members) {
      ImageBox ib{m.image_id, m.box};
      if (std::find(out.begin(), out.end(), ib) == out.end()) out.push_back(ib);
    }
  return out;
}

}  // namespace wslc
