#include "wslc/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "wslc/config.hpp"
#include "wslc/parallel.hpp"
#include "wslc/pipeline.hpp"

namespace wslc {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
  std::string detections;
  std::string ground_truth;
  std::optional<double> iou;
};

const char* describe(const std::string& stage) {
  static const std::map<std::string, const char*> text{
      {"gen-data", "generate (or load and split) the easy, hard and test sets"},
      {"train-initial", "train the stage-1 classifier on easy images"},
      {"build-graph", "build the relationship graph from the stage-1 confusion matrix"},
      {"finetune", "fine-tune on hard images with the graph loss (plus baselines)"},
      {"eval-cls", "classification accuracy and entropy on the test set"},
      {"localize", "discover subcategories and localized positives in hard images"},
      {"train-detectors", "train one linear SVM detector per class"},
      {"detect", "run the detectors on the test set"},
      {"eval-det", "average precision of a detections file"},
      {"probe", "linear-probe accuracy of the model embeddings"},
      {"report", "collect all stage metrics into one CSV and summary"},
      {"full-pipeline", "run every stage in order"}};
  return text.at(stage);
}

// Held for the duration of one command; a second run on the same directory fails fast.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".wslc.lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST)
        throw std::runtime_error("output directory is locked by another run (remove " + path_.string() +
                                 " if that run died)");
      throw std::runtime_error("cannot create lock " + path_.string() + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Webly supervised curriculum learning at desk scale", "wslc"};
  app.require_subcommand(1, 1);
  Options o;
  std::vector<std::string> stages = pipeline_stages();
  stages.push_back("full-pipeline");
  for (const auto& name : stages) {
    CLI::App* sub = app.add_subcommand(name, describe(name));
    sub->add_option("--config", o.config, "pipeline config (JSON)");
    sub->add_option("--seed", o.seed, "global seed, overrides the config");
    sub->add_option("--out", o.out, "output directory, overrides the config");
    sub->add_option("--threads", o.threads, "worker threads (default: WSLC_THREADS or 1)")->check(CLI::PositiveNumber);
    if (name == "eval-det") {
      sub->add_option("--detections", o.detections, "detections CSV; evaluates these files without a config");
      sub->add_option("--ground-truth", o.ground_truth, "ground-truth CSV");
      sub->add_option("--iou", o.iou, "IoU threshold for a true positive")->check(CLI::Range(0.0, 1.0));
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  const std::string stage = app.get_subcommands().front()->get_name();

  if (o.threads) {
    set_num_threads(*o.threads);
  } else if (const char* env = std::getenv("WSLC_THREADS"); env && *env) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1) {
      err << "error: WSLC_THREADS must be a positive integer, got '" << env << "'\n";
      return kExitUsage;
    }
    set_num_threads(static_cast<int>(n));
  }

  try {
    if (stage == "eval-det" && !o.detections.empty()) {
      if (o.ground_truth.empty()) {
        err << "error: --detections needs --ground-truth\n";
        return kExitUsage;
      }
      double iou = 0.5;
      if (!o.config.empty()) iou = load_config(o.config).detect.iou_thresh;
      if (o.iou) iou = *o.iou;
      if (iou <= 0) {
        err << "error: --iou must be > 0\n";
        return kExitUsage;
      }
      const fs::path eval_csv = o.out.empty() ? fs::path() : fs::path(o.out) / "eval.csv";
      eval_det_files(o.detections, o.ground_truth, eval_csv, iou, {}, out);
      return kExitOk;
    }
    if (o.config.empty()) {
      err << "error: " << stage << " requires --config\n" << app.get_subcommands().front()->help();
      return kExitUsage;
    }
    PipelineConfig cfg = load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (!o.out.empty()) cfg.output_dir = o.out;
    const fs::path dir = cfg.output_dir;
    DirLock lock(dir);
    Pipeline(cfg, dir, out).run(stage);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace wslc
