#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "wslc/detect.hpp"

namespace wslc::test {

// Matching written from scratch: every detection tries the unmatched box with the
// highest IoU in its image.
inline std::vector<bool> oracle_tp(const std::vector<Detection>& ranked, const std::map<int, std::vector<Box>>& gt) {
  std::map<int, std::set<std::size_t>> taken;
  std::vector<bool> tp;
  for (const auto& d : ranked) {
    double best = -1;
    std::size_t pick = 0;
    if (gt.count(d.image_id))
      for (std::size_t g = 0; g < gt.at(d.image_id).size(); ++g)
        if (!taken[d.image_id].count(g) && iou(d.box, gt.at(d.image_id)[g]) > best) {
          best = iou(d.box, gt.at(d.image_id)[g]);
          pick = g;
        }
    tp.push_back(best >= 0.5);
    if (best >= 0.5) taken[d.image_id].insert(pick);
  }
  return tp;
}

// Interpolated precision at each of the G recall steps, over every prefix.
inline double oracle_ap(const std::vector<bool>& tp, long total) {
  double ap = 0;
  for (long j = 1; j <= total; ++j) {
    double best = 0;
    long hits = 0;
    for (std::size_t m = 0; m < tp.size(); ++m) {
      hits += tp[m];
      if (hits >= j) best = std::max(best, static_cast<double>(hits) / static_cast<double>(m + 1));
    }
    ap += best / static_cast<double>(total);
  }
  return ap;
}

}  // namespace wslc::test
