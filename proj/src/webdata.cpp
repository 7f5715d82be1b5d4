#include "wslc/webdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "wslc/parallel.hpp"
#include "wslc/rng.hpp"

namespace wslc {

const char* source_name(Source s) { return s == Source::kEasy ? "EASY" : "HARD"; }

Source parse_source(const std::string& s) {
  if (s == "EASY") return Source::kEasy;
  if (s == "HARD") return Source::kHard;
  throw std::invalid_argument("unknown source tag '" + s + "' (expected EASY or HARD)");
}

CategorySpace::CategorySpace(int num_categories) {
  static const char* kShapes[] = {"rect", "ellipse", "triangle", "diamond"};
  static const char* kHues[] = {"red", "lime", "cyan", "violet"};
  if (num_categories < 2 || num_categories > 16)
    throw std::invalid_argument("number of synthetic categories must be in [2, 16]");
  for (int i = 0; i < num_categories; ++i) {
    CategoryStyle s;
    s.shape = static_cast<ShapeFamily>((i / 2) % 4);
    s.texture = i % 2 ? Texture::kStripes : Texture::kSolid;
    s.hue_band = ((i / 2) + i / 8) % 4;
    s.name = std::string(kHues[s.hue_band]) + "_" + kShapes[static_cast<int>(s.shape)] +
             (s.texture == Texture::kStripes ? "_striped" : "");
    styles_.push_back(s);
  }
}

const CategoryStyle& CategorySpace::style(int category) const {
  if (category < 0 || category >= size())
    throw std::out_of_range("unknown category " + std::to_string(category) + " (have " + std::to_string(size()) + ")");
  return styles_[category];
}

std::vector<std::string> CategorySpace::names() const {
  std::vector<std::string> out;
  for (const auto& s : styles_) out.push_back(s.name);
  return out;
}

Eigen::MatrixXd CategorySpace::visual_similarity() const {
  const int n = size();
  Eigen::MatrixXd sim = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto &a = styles_[i], &b = styles_[j];
      sim(i, j) = (a.shape == b.shape) + (a.hue_band == b.hue_band) + (a.texture == b.texture);
    }
    const double total = sim.row(i).sum();
    if (total > 0) {
      sim.row(i) /= total;
    } else {
      for (int j = 0; j < n; ++j)
        if (j != i) sim(i, j) = 1.0 / (n - 1);
    }
  }
  return sim;
}

void NoiseModel::validate() const {
  if (!(flip_rate >= 0 && flip_rate < 1)) throw std::invalid_argument("flip_rate must be in [0,1)");
  if (!(similarity_bias >= 0 && similarity_bias <= 1)) throw std::invalid_argument("similarity_bias must be in [0,1]");
  if (!(junk_rate >= 0 && junk_rate < 1)) throw std::invalid_argument("junk_rate must be in [0,1)");
  if (!(flip_rate + junk_rate < 1)) throw std::invalid_argument("flip_rate + junk_rate must be < 1");
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

struct Rgb {
  float r, g, b;
};

Rgb hsv(double h_deg, double s, double v) {
  h_deg = std::fmod(std::fmod(h_deg, 360.0) + 360.0, 360.0);
  const double c = v * s, x = c * (1 - std::abs(std::fmod(h_deg / 60.0, 2.0) - 1)), m = v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h_deg / 60.0)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

bool inside_shape(ShapeFamily shape, double u, double v) {
  switch (shape) {
    case ShapeFamily::kRectangle: return true;
    case ShapeFamily::kEllipse: return (2 * u - 1) * (2 * u - 1) + (2 * v - 1) * (2 * v - 1) <= 1.0;
    case ShapeFamily::kTriangle: return std::abs(2 * u - 1) <= v;
    case ShapeFamily::kDiamond: return std::abs(2 * u - 1) + std::abs(2 * v - 1) <= 1.0;
  }
  return false;
}

void draw_object(Image& im, const CategoryStyle& style, const Box& box, Rng& rng) {
  const double hue = style.hue_band * 90.0 + rng.uniform(-8, 8);
  const Rgb fill = hsv(hue, rng.uniform(0.7, 0.9), rng.uniform(0.8, 0.95));
  const Rgb dark = hsv(hue, 0.9, 0.35);
  const int period = std::max(4, box.height() / 4);
  for (int y = box.y1; y < box.y2; ++y) {
    const double v = (y - box.y1 + 0.5) / box.height();
    const bool stripe = style.texture == Texture::kStripes && ((y - box.y1) % period) >= period / 2;
    const Rgb& c = stripe ? dark : fill;
    for (int x = box.x1; x < box.x2; ++x) {
      const double u = (x - box.x1 + 0.5) / box.width();
      if (!inside_shape(style.shape, u, v)) continue;
      pixel(im, y, x, 0) = c.r;
      pixel(im, y, x, 1) = c.g;
      pixel(im, y, x, 2) = c.b;
    }
  }
}

void add_noise(Image& im, double sigma, Rng& rng) {
  for (auto& v : im.values()) v = std::clamp(static_cast<float>(v + sigma * rng.normal()), 0.0f, 1.0f);
}

Image easy_background(int size, Rng& rng) {
  const float g = static_cast<float>(rng.uniform(0.8, 0.95));
  return make_image(size, size, g + static_cast<float>(rng.uniform(-0.03, 0.03)),
                    g + static_cast<float>(rng.uniform(-0.03, 0.03)), g + static_cast<float>(rng.uniform(-0.03, 0.03)));
}

// Low-saturation base color with a linear gradient.
Image hard_background(int size, Rng& rng) {
  Image im = make_image(size, size);
  const Rgb base = hsv(rng.uniform(0, 360), rng.uniform(0.05, 0.3), rng.uniform(0.45, 0.85));
  const double gx = rng.uniform(-0.15, 0.15), gy = rng.uniform(-0.15, 0.15);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const float shade = static_cast<float>(gx * (x / double(size) - 0.5) + gy * (y / double(size) - 0.5));
      pixel(im, y, x, 0) = base.r + shade;
      pixel(im, y, x, 1) = base.g + shade;
      pixel(im, y, x, 2) = base.b + shade;
    }
  return im;
}

Box random_box(int size, double area_lo, double area_hi, Rng& rng) {
  const double area = rng.uniform(area_lo, area_hi) * size * size;
  const double aspect = std::exp(rng.uniform(-0.25, 0.25));
  const int w = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 3, size);
  const int h = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 3, size);
  const int x1 = rng.uniform_int(0, size - w), y1 = rng.uniform_int(0, size - h);
  return {x1, y1, x1 + w, y1 + h, 0.0};
}

// Gray blobs and bars that belong to no category.
void draw_scene_clutter(Image& im, Rng& rng) {
  const int size = image_height(im);
  const int count = rng.uniform_int(2, 4);
  for (int k = 0; k < count; ++k) {
    const Box b = random_box(size, 0.03, 0.15, rng);
    const float g = static_cast<float>(rng.uniform(0.2, 0.8));
    const bool bar = rng.bernoulli(0.5);
    for (int y = b.y1; y < b.y2; ++y)
      for (int x = b.x1; x < b.x2; ++x) {
        if (bar && ((x + y) % 5) > 1) continue;
        for (int c = 0; c < 3; ++c) pixel(im, y, x, c) = g;
      }
  }
}

std::uint64_t sample_seed(std::uint64_t seed, std::string_view kind, int category, int index) {
  return derive_seed(derive_seed(derive_seed(seed, kind), static_cast<std::uint64_t>(category)),
                     static_cast<std::uint64_t>(index));
}

struct Rendered {
  Image image;
  std::vector<LabeledBox> boxes;
};

Rendered render_easy(const CategorySpace& space, int category, std::uint64_t image_seed, int size) {
  Rng rng(image_seed);
  Rendered out{easy_background(size, rng), {}};
  // Resampled until the integer box itself lands in the 40-70% area band.
  int w = 0, h = 0;
  for (;;) {
    const double area = rng.uniform(0.40, 0.70) * size * size;
    const double aspect = std::exp(rng.uniform(-0.15, 0.15));
    w = std::min(size, static_cast<int>(std::lround(std::sqrt(area * aspect))));
    h = std::min(size, static_cast<int>(std::lround(std::sqrt(area / aspect))));
    const double frac = static_cast<double>(w) * h / (static_cast<double>(size) * size);
    if (frac >= 0.40 && frac <= 0.70) break;
  }
  // Center offset bounded well inside the 5% tolerance to absorb integer rounding.
  const double max_shift = 0.03 * size;
  const int x1 = std::clamp(static_cast<int>(std::lround((size - w) / 2.0 + rng.uniform(-max_shift, max_shift))), 0,
                            size - w);
  const int y1 = std::clamp(static_cast<int>(std::lround((size - h) / 2.0 + rng.uniform(-max_shift, max_shift))), 0,
                            size - h);
  const Box box{x1, y1, x1 + w, y1 + h, 0.0};
  draw_object(out.image, space.style(category), box, rng);
  add_noise(out.image, 0.01, rng);
  out.boxes.push_back({category, box});
  return out;
}

Rendered render_hard(const CategorySpace& space, int category, bool junk, std::uint64_t image_seed, int size) {
  Rng rng(image_seed);
  Rendered out{hard_background(size, rng), {}};
  if (junk) {
    draw_scene_clutter(out.image, rng);
    add_noise(out.image, 0.03, rng);
    return out;
  }
  // Distractors first so the tagged instances stay on top.
  const int distractors = space.size() > 1 ? rng.uniform_int(0, 2) : 0;
  for (int d = 0; d < distractors; ++d) {
    int other = rng.uniform_int(0, space.size() - 2);
    if (other >= category) ++other;
    const Box b = random_box(size, 0.04, 0.10, rng);
    draw_object(out.image, space.style(other), b, rng);
    out.boxes.push_back({other, b});
  }
  // Instances never touch, so each one stays a separate object.
  const int gap = std::max(1, size / 16);
  const int instances = rng.uniform_int(1, 3);
  std::vector<Box> placed;
  for (int k = 0; k < instances; ++k) {
    for (int attempt = 0; attempt < 30; ++attempt) {
      const Box b = random_box(size, 0.10, 0.50, rng);
      const bool clear = std::none_of(placed.begin(), placed.end(), [&](const Box& p) {
        return intersection_area(Box{p.x1 - gap, p.y1 - gap, p.x2 + gap, p.y2 + gap, 0.0}, b) > 0;
      });
      if (!clear) continue;
      draw_object(out.image, space.style(category), b, rng);
      placed.push_back(b);
      out.boxes.push_back({category, b});
      break;
    }
  }
  add_noise(out.image, 0.03, rng);
  return out;
}

std::string easy_origin(int category, int num_categories, std::uint64_t seed, int index, int size) {
  std::ostringstream os;
  os << "synth:easy:c=" << category << ":k=" << num_categories << ":seed=" << seed << ":i=" << index << ":s=" << size;
  return os.str();
}

std::string hard_origin(int category, int num_categories, std::uint64_t seed, int index, int size, bool junk) {
  std::ostringstream os;
  os << "synth:hard:c=" << category << ":k=" << num_categories << ":seed=" << seed << ":i=" << index << ":s=" << size
     << ":junk=" << (junk ? 1 : 0);
  return os.str();
}

int draw_flip_target(int category, const NoiseModel& noise, const Eigen::MatrixXd& sim, int num_classes, Rng& rng) {
  if (rng.bernoulli(noise.similarity_bias)) {
    const double u = rng.uniform();
    double acc = 0;
    int last = -1;
    for (int j = 0; j < num_classes; ++j) {
      if (j == category || sim(category, j) <= 0) continue;
      acc += sim(category, j);
      last = j;
      if (u < acc) return j;
    }
    if (last >= 0) return last;
  }
  int other = rng.uniform_int(0, num_classes - 2);
  return other >= category ? other + 1 : other;
}

}  // namespace

std::vector<Sample> gen_easy(const CategorySpace& space, int category, int n, std::uint64_t seed, int image_size,
                             int first_index) {
  space.style(category);
  if (n < 1) throw std::invalid_argument("gen_easy needs n >= 1");
  if (image_size < 8) throw std::invalid_argument("image_size must be >= 8");
  std::vector<Sample> out(n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t k) {
    const int index = first_index + static_cast<int>(k);
    auto r = render_easy(space, category, derive_seed(sample_seed(seed, "easy", category, index), 0), image_size);
    auto& s = out[k];
    s.image = std::move(r.image);
    s.gt_boxes = std::move(r.boxes);
    s.observed_label = s.true_label = category;
    s.source = Source::kEasy;
    s.origin = easy_origin(category, space.size(), seed, index, image_size);
  });
  return out;
}

std::vector<Sample> gen_hard(const CategorySpace& space, int category, int n, const NoiseModel& noise,
                             const Eigen::MatrixXd& visual_similarity, std::uint64_t seed, int image_size,
                             int first_index) {
  space.style(category);
  noise.validate();
  if (n < 1) throw std::invalid_argument("gen_hard needs n >= 1");
  if (image_size < 8) throw std::invalid_argument("image_size must be >= 8");
  const int nc = space.size();
  if (visual_similarity.rows() != nc || visual_similarity.cols() != nc)
    throw std::invalid_argument("visual similarity must be C x C");
  std::vector<Sample> out(n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t k) {
    const int index = first_index + static_cast<int>(k);
    const auto base = sample_seed(seed, "hard", category, index);
    Rng label_rng(derive_seed(base, 1));
    const double u = label_rng.uniform();
    auto& s = out[k];
    s.true_label = category;
    s.observed_label = category;
    s.junk = false;
    if (u < noise.flip_rate) {
      s.observed_label = draw_flip_target(category, noise, visual_similarity, nc, label_rng);
    } else if (u < noise.flip_rate + noise.junk_rate) {
      s.junk = true;
    }
    auto r = render_hard(space, category, s.junk, derive_seed(base, 0), image_size);
    s.image = std::move(r.image);
    s.gt_boxes = std::move(r.boxes);
    s.source = Source::kHard;
    s.origin = hard_origin(category, nc, seed, index, image_size, s.junk);
  });
  return out;
}

Image gen_background(std::uint64_t seed, int image_size) {
  Rng rng(derive_seed(seed, "background"));
  Image im = hard_background(image_size, rng);
  draw_scene_clutter(im, rng);
  add_noise(im, 0.03, rng);
  return im;
}

bool is_synthetic_origin(const std::string& origin) { return origin.rfind("synth:", 0) == 0; }

Image render_origin(const std::string& origin) {
  if (!is_synthetic_origin(origin)) throw std::invalid_argument("not a synthetic origin: " + origin);
  std::map<std::string, std::string> kv;
  std::string kind;
  std::stringstream ss(origin.substr(6));
  std::string tok;
  while (std::getline(ss, tok, ':')) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) {
      kind = tok;
    } else {
      kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
  }
  try {
    const int c = std::stoi(kv.at("c")), k = std::stoi(kv.at("k")), i = std::stoi(kv.at("i")),
              size = std::stoi(kv.at("s"));
    const std::uint64_t seed = std::stoull(kv.at("seed"));
    const CategorySpace space(k);
    if (kind == "easy") return render_easy(space, c, derive_seed(sample_seed(seed, "easy", c, i), 0), size).image;
    if (kind == "hard")
      return render_hard(space, c, kv.at("junk") == "1", derive_seed(sample_seed(seed, "hard", c, i), 0), size).image;
  } catch (const std::out_of_range&) {
  } catch (const std::invalid_argument&) {
  }
  throw std::invalid_argument("malformed synthetic origin: " + origin);
}

// ---------------------------------------------------------------------------
// Manifests

DatasetManifest make_manifest(const std::vector<Sample>& samples, std::vector<std::string> class_names) {
  DatasetManifest m;
  m.class_names = std::move(class_names);
  for (const auto& s : samples) m.records.push_back({s.origin, s.observed_label, s.source, s.true_label, s.gt_boxes});
  return m;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

}  // namespace

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "# classes: ";
  for (std::size_t i = 0; i < manifest.class_names.size(); ++i) f << (i ? "," : "") << manifest.class_names[i];
  f << "\npath_or_params,observed_label,source,true_label,gt_boxes\n";
  for (const auto& r : manifest.records) {
    f << csv_field(r.path_or_params) << ',' << r.observed_label << ',' << source_name(r.source) << ','
      << r.true_label << ',';
    for (std::size_t i = 0; i < r.gt_boxes.size(); ++i) {
      const auto& b = r.gt_boxes[i];
      f << (i ? ";" : "") << b.cls << ':' << b.box.x1 << ':' << b.box.y1 << ':' << b.box.x2 << ':' << b.box.y2;
    }
    f << '\n';
  }
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read manifest " + path.string());
  DatasetManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.rfind("# classes: ", 0) == 0) {
      m.class_names = split_on(line.substr(11), ',');
      continue;
    }
    if (line.empty() || line[0] == '#' || line.rfind("path_or_params,", 0) == 0) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 5)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    ManifestRecord r;
    try {
      r.path_or_params = fields[0];
      r.observed_label = std::stoi(fields[1]);
      r.source = parse_source(fields[2]);
      r.true_label = std::stoi(fields[3]);
      for (const auto& tok : split_on(fields[4], ';')) {
        const auto parts = split_on(tok, ':');
        if (parts.size() != 5) throw std::invalid_argument("bad box '" + tok + "'");
        r.gt_boxes.push_back({std::stoi(parts[0]),
                              {std::stoi(parts[1]), std::stoi(parts[2]), std::stoi(parts[3]), std::stoi(parts[4]), 0.0}});
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    m.records.push_back(std::move(r));
  }
  const int nc = m.num_classes();
  for (const auto& r : m.records)
    if (r.observed_label < 0 || r.observed_label >= nc || r.true_label < 0 || r.true_label >= nc)
      throw std::runtime_error(path.string() + ": label out of range for " + std::to_string(nc) + " classes");
  return m;
}

std::vector<Image> materialize(const DatasetManifest& manifest, int image_size) {
  std::vector<Image> images(manifest.records.size());
  parallel_for(images.size(), [&](std::size_t i) {
    const auto& origin = manifest.records[i].path_or_params;
    Image im;
    if (is_synthetic_origin(origin)) {
      im = render_origin(origin);
    } else {
      auto loaded = read_image(origin);
      if (!loaded) throw std::runtime_error("cannot decode image " + origin);
      im = std::move(*loaded);
    }
    if (image_height(im) != image_size || image_width(im) != image_size) im = resize(im, image_size, image_size);
    images[i] = std::move(im);
  });
  return images;
}

FolderLoad load_folder(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root " + root.string() + " is not a directory");
  FolderLoad out;
  std::map<std::string, Source> tags;
  const auto sidecar = root / "sources.txt";
  if (fs::exists(sidecar)) {
    std::ifstream f(sidecar);
    std::string rel, tag;
    while (f >> rel >> tag) tags[rel] = parse_source(tag);
  } else {
    out.warnings.push_back("no sources.txt under " + root.string() + "; all records default to EASY");
  }
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw std::runtime_error("no class directories under " + root.string());
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    const std::string cls = class_dirs[c].filename().string();
    out.manifest.class_names.push_back(cls);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[c]))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    int kept = 0;
    for (const auto& file : files) {
      if (!read_image(file)) {
        out.warnings.push_back("skipping unreadable image " + file.string());
        continue;
      }
      const std::string rel = cls + "/" + file.filename().string();
      const auto tag = tags.find(rel);
      ManifestRecord r;
      r.path_or_params = file.string();
      r.observed_label = r.true_label = static_cast<int>(c);
      r.source = tag == tags.end() ? Source::kEasy : tag->second;
      out.manifest.records.push_back(std::move(r));
      ++kept;
    }
    if (kept == 0) throw std::runtime_error("class directory " + class_dirs[c].string() + " has no readable images");
  }
  return out;
}

Splits split(const DatasetManifest& manifest, const std::array<double, 3>& fractions, std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  for (double f : fractions)
    if (!(f > 0)) throw std::invalid_argument("split fractions must be positive");
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split fractions must sum to 1");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) by_class[manifest.records[i].true_label].push_back(i);
  for (const auto& [c, idx] : by_class)
    if (idx.size() < 3)
      throw std::invalid_argument("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                                  " samples, fewer than the 3 splits");

  // Global targets by largest remainder; per-class leftovers go where the
  // global deficit is largest, so each class stays within one of its share.
  const double n_total = static_cast<double>(manifest.records.size());
  std::array<long, 3> target{};
  {
    std::array<double, 3> rem{};
    long assigned = 0;
    for (int s = 0; s < 3; ++s) {
      target[s] = static_cast<long>(std::floor(fractions[s] * n_total));
      rem[s] = fractions[s] * n_total - target[s];
      assigned += target[s];
    }
    for (long left = static_cast<long>(n_total) - assigned; left > 0; --left) {
      const int best = static_cast<int>(std::max_element(rem.begin(), rem.end()) - rem.begin());
      ++target[best];
      rem[best] = -1;
    }
  }
  std::map<int, std::array<long, 3>> counts;
  std::map<int, std::array<double, 3>> fracs;
  std::array<long, 3> used{};
  for (const auto& [c, idx] : by_class) {
    auto& cnt = counts[c];
    for (int s = 0; s < 3; ++s) {
      const double share = fractions[s] * static_cast<double>(idx.size());
      cnt[s] = static_cast<long>(std::floor(share));
      fracs[c][s] = share - cnt[s];
      used[s] += cnt[s];
    }
  }
  for (const auto& [c, idx] : by_class) {
    auto& cnt = counts[c];
    std::array<bool, 3> bumped{};
    for (long left = static_cast<long>(idx.size()) - (cnt[0] + cnt[1] + cnt[2]); left > 0; --left) {
      int best = -1;
      for (int s = 0; s < 3; ++s) {
        if (bumped[s]) continue;
        if (best < 0) {
          best = s;
          continue;
        }
        const long ds = target[s] - used[s], db = target[best] - used[best];
        if (ds > db || (ds == db && fracs[c][s] > fracs[c][best])) best = s;
      }
      ++cnt[best];
      ++used[best];
      bumped[best] = true;
    }
    for (int s = 0; s < 3; ++s) {
      if (cnt[s] > 0) continue;
      const int donor = static_cast<int>(std::max_element(cnt.begin(), cnt.end()) - cnt.begin());
      --cnt[donor];
      ++cnt[s];
    }
  }

  std::array<std::vector<std::size_t>, 3> chosen;
  for (const auto& [c, idx] : by_class) {
    auto shuffled = idx;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    rng.shuffle(shuffled.begin(), shuffled.end());
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s)
      for (long k = 0; k < counts[c][s]; ++k) chosen[s].push_back(shuffled[pos++]);
  }
  std::array<DatasetManifest, 3> parts;
  for (int s = 0; s < 3; ++s) {
    std::sort(chosen[s].begin(), chosen[s].end());
    parts[s].class_names = manifest.class_names;
    for (std::size_t i : chosen[s]) parts[s].records.push_back(manifest.records[i]);
  }
  return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
}

LabeledImages training_view(const std::vector<Sample>& samples, int num_classes) {
  LabeledImages v;
  v.num_classes = num_classes;
  for (const auto& s : samples) {
    v.images.push_back(s.image);
    v.labels.push_back(s.observed_label);
  }
  return v;
}

LabeledImages evaluation_view(const std::vector<Sample>& samples, int num_classes) {
  LabeledImages v;
  v.num_classes = num_classes;
  for (const auto& s : samples) {
    if (s.junk) continue;
    v.images.push_back(s.image);
    v.labels.push_back(s.true_label);
  }
  return v;
}

}  // namespace wslc
