#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "wslc/config.hpp"
#include "wslc/localize.hpp"
#include "wslc/webdata.hpp"

namespace wslc {

// Stage order of full-pipeline.
const std::vector<std::string>& pipeline_stages();

// Retained boxes whose IoU with a ground-truth box of cls in the same image is >= 0.5.
struct PurityCount {
  long hits = 0;
  long total = 0;
  double fraction() const { return total > 0 ? static_cast<double>(hits) / static_cast<double>(total) : 0.0; }
};
PurityCount box_purity(std::span<const ImageBox> boxes, std::span<const ManifestRecord> records, int cls);

// Observed labels (training) or true labels (evaluation, junk dropped).
LabeledImages labeled_view(const DatasetManifest& manifest, std::span<const Image> images, bool true_labels);

// Every stage reads its inputs from and writes its outputs under out_dir.
class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, std::filesystem::path out_dir, std::ostream& log);

  // Runs one stage by subcommand name; full-pipeline runs them all.
  void run(const std::string& stage);

  void gen_data();
  void train_initial();
  void build_graph();
  void finetune();
  void eval_cls();
  void localize();
  void train_detectors();
  void detect();
  void eval_det();
  void probe();
  void report();

  std::filesystem::path path(const std::string& relative) const { return out_ / relative; }

 private:
  DatasetManifest manifest(const std::string& name) const;
  std::vector<Image> images(const DatasetManifest& m) const;
  Model model(const std::string& name, int num_classes) const;
  std::uint64_t seed(const std::string& stage) const;
  void write_metrics(const std::string& stage, const std::string& json) const;

  PipelineConfig cfg_;
  std::filesystem::path out_;
  std::ostream& log_;
};

// Detections and ground truth files evaluated on their own; prints one AP line per class and the mAP.
// Returns the mAP.
double eval_det_files(const std::filesystem::path& detections, const std::filesystem::path& ground_truth,
                      const std::filesystem::path& eval_csv, double iou_thresh,
                      std::span<const std::string> class_names, std::ostream& log);

}  // namespace wslc
