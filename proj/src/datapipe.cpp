#include "lappyr/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "lappyr/errors.hpp"
#include "lappyr/image_io.hpp"
#include "lappyr/losses.hpp"

namespace fs = std::filesystem;

namespace lappyr {

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

Image load_rgb(const std::string& path) {
  Image img = read_image(path);
  if (img.channels == 1) img = expand_to_rgb(img);
  if (!all_finite(img)) throw DataError(path + ": image contains non-finite values");
  for (float v : img.data)
    if (v < 0.0f) throw DataError(path + ": image contains negative values");
  return img;
}

}  // namespace

Dataset Dataset::load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  Dataset ds;
  ds.base_dir_ = fs::path(path).parent_path().string();
  std::set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 5)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected 5 tab-separated fields, got " +
                      std::to_string(fields.size()));
    ManifestEntry e;
    e.id = fields[0];
    e.scene = fields[1] == "-" ? "" : fields[1];
    auto resolve = [&](const std::string& p) {
      fs::path fp(p);
      if (fp.is_absolute() || ds.base_dir_.empty()) return p;
      return (fs::path(ds.base_dir_) / fp).string();
    };
    e.input_path = resolve(fields[2]);
    e.albedo_path = resolve(fields[3]);
    e.shading_path = resolve(fields[4]);
    if (e.id.empty())
      throw DataError(path + ":" + std::to_string(line_no) + ": empty id");
    if (!ids.insert(e.id).second)
      throw DataError(path + ":" + std::to_string(line_no) + ": duplicate id '" + e.id + "'");

    ImageHeader hi, ha, hs;
    try {
      hi = read_image_header(e.input_path);
      ha = read_image_header(e.albedo_path);
      hs = read_image_header(e.shading_path);
    } catch (const DataError& err) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + err.what());
    }
    if (hi.height != ha.height || hi.width != ha.width || hi.height != hs.height ||
        hi.width != hs.width)
      throw DataError(path + ":" + std::to_string(line_no) + ": extent mismatch for '" +
                      e.id + "' (input " + std::to_string(hi.width) + "x" +
                      std::to_string(hi.height) + ", albedo " + std::to_string(ha.width) +
                      "x" + std::to_string(ha.height) + ", shading " +
                      std::to_string(hs.width) + "x" + std::to_string(hs.height) + ")");
    e.height = hi.height;
    e.width = hi.width;
    ds.entries_.push_back(std::move(e));
  }
  ds.cache_ = std::make_shared<std::vector<std::optional<SamplePair>>>(ds.entries_.size());
  return ds;
}

Dataset Dataset::from_pairs(std::vector<SamplePair> pairs) {
  Dataset ds;
  ds.in_memory_ = true;
  ds.cache_ = std::make_shared<std::vector<std::optional<SamplePair>>>();
  std::set<std::string> ids;
  for (auto& p : pairs) {
    check(p.input.same_extents(p.albedo) && p.input.same_extents(p.shading),
          "from_pairs: extent mismatch for '" + p.id + "'");
    check(ids.insert(p.id).second, "from_pairs: duplicate id '" + p.id + "'");
    ManifestEntry e;
    e.id = p.id;
    e.scene = p.scene;
    e.height = p.input.height;
    e.width = p.input.width;
    ds.entries_.push_back(std::move(e));
    ds.cache_->push_back(std::move(p));
  }
  return ds;
}

bool Dataset::has_scenes() const {
  for (const auto& e : entries_)
    if (e.scene.empty()) return false;
  return !entries_.empty();
}

const SamplePair& Dataset::pair(std::size_t index) const {
  check(index < entries_.size(), "dataset index out of range");
  auto& slot = (*cache_)[index];
  if (!slot.has_value()) {
    const ManifestEntry& e = entries_[index];
    SamplePair p;
    p.id = e.id;
    p.scene = e.scene;
    p.input = load_rgb(e.input_path);
    p.albedo = load_rgb(e.albedo_path);
    p.shading = load_rgb(e.shading_path);
    if (!p.input.same_extents(p.albedo) || !p.input.same_extents(p.shading))
      throw DataError("extent mismatch while loading '" + e.id + "'");
    slot = std::move(p);
  }
  return *slot;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.base_dir_ = base_dir_;
  out.in_memory_ = in_memory_;
  out.cache_ = std::make_shared<std::vector<std::optional<SamplePair>>>(indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    check(indices[j] < entries_.size(), "subset index out of range");
    out.entries_.push_back(entries_[indices[j]]);
    (*out.cache_)[j] = (*cache_)[indices[j]];
  }
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, SplitMode mode, std::uint64_t seed) {
  if (mode == SplitMode::none)
    throw std::invalid_argument("split: mode none does not define a split");
  Rng rng(derive_seed(seed, 0xda7a));
  std::vector<std::size_t> train_idx, test_idx;
  if (mode == SplitMode::image_split) {
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng.engine());
    const std::size_t train_n = (order.size() + 1) / 2;
    train_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_n));
    test_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(train_n), order.end());
  } else {
    if (!ds.has_scenes())
      throw DataError("scene_split requires a scene label on every manifest entry");
    std::vector<std::string> scenes;
    for (const auto& e : ds.entries())
      if (std::find(scenes.begin(), scenes.end(), e.scene) == scenes.end())
        scenes.push_back(e.scene);
    std::shuffle(scenes.begin(), scenes.end(), rng.engine());
    const std::size_t train_n = (scenes.size() + 1) / 2;
    std::set<std::string> train_scenes(scenes.begin(),
                                       scenes.begin() + static_cast<std::ptrdiff_t>(train_n));
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (train_scenes.count(ds.entries()[i].scene))
        train_idx.push_back(i);
      else
        test_idx.push_back(i);
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {ds.subset(train_idx), ds.subset(test_idx)};
}

std::vector<SamplePair> sample_batch(const Dataset& ds, Rng& rng, int batch, int crop,
                                     double scale_min, double scale_max, double flip_p) {
  check(!ds.empty(), "sample_batch: dataset is empty");
  check(batch >= 1, "sample_batch: batch must be >= 1");
  check(crop >= 1, "sample_batch: crop must be >= 1");
  check(scale_min > 0 && scale_min <= scale_max, "sample_batch: invalid scale range");
  std::vector<SamplePair> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    const auto& src = ds.pair(static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(ds.size()) - 1)));
    SamplePair s;
    s.id = src.id;
    s.scene = src.scene;

    Image albedo = src.albedo;
    Image shading = src.shading;
    Image input = src.input;
    const double f = rng.uniform(scale_min, scale_max);
    const int sh = std::max(1, static_cast<int>(std::lround(src.input.height * f)));
    const int sw = std::max(1, static_cast<int>(std::lround(src.input.width * f)));
    if (sh != src.input.height || sw != src.input.width) {
      albedo = resize_bilinear(albedo, sh, sw);
      shading = resize_bilinear(shading, sh, sw);
      input = hadamard(albedo, shading);
    }
    if (crop > albedo.height || crop > albedo.width)
      throw std::invalid_argument("sample_batch: crop " + std::to_string(crop) +
                                  " exceeds scaled extents " + std::to_string(albedo.width) +
                                  "x" + std::to_string(albedo.height));
    const int y0 = static_cast<int>(rng.uniform_int(0, albedo.height - crop));
    const int x0 = static_cast<int>(rng.uniform_int(0, albedo.width - crop));
    albedo = lappyr::crop(albedo, y0, x0, crop, crop);
    shading = lappyr::crop(shading, y0, x0, crop, crop);
    input = lappyr::crop(input, y0, x0, crop, crop);
    if (rng.bernoulli(flip_p)) {
      albedo = flip_horizontal(albedo);
      shading = flip_horizontal(shading);
      input = flip_horizontal(input);
    }
    s.albedo = std::move(albedo);
    s.shading = std::move(shading);
    s.input = std::move(input);
    out.push_back(std::move(s));
  }
  return out;
}

MondrianScene synth_mondrian_scene(std::uint64_t seed, int height, int width) {
  check(height >= 8 && width >= 8, "synth_mondrian: extents must be at least 8");
  Rng rng(seed);
  MondrianScene scene;
  SamplePair& p = scene.pair;
  p.id = "mondrian" + std::to_string(seed);

  // Albedo: base color plus overlapping solid rectangles.
  Image albedo(3, height, width);
  for (int c = 0; c < 3; ++c) {
    const float base = static_cast<float>(rng.uniform(0.1, 0.9));
    std::fill(albedo.plane(c), albedo.plane(c) + albedo.pixel_count(), base);
  }
  const int n_rects = static_cast<int>(rng.uniform_int(6, 14));
  const int min_side = std::max(2, std::min(height, width) / 10);
  for (int i = 0; i < n_rects; ++i) {
    const int rh = static_cast<int>(rng.uniform_int(min_side, std::max(min_side, height / 2)));
    const int rw = static_cast<int>(rng.uniform_int(min_side, std::max(min_side, width / 2)));
    const int y0 = static_cast<int>(rng.uniform_int(0, height - rh));
    const int x0 = static_cast<int>(rng.uniform_int(0, width - rw));
    float color[3];
    for (float& v : color) v = static_cast<float>(rng.uniform(0.05, 0.95));
    for (int c = 0; c < 3; ++c)
      for (int y = y0; y < y0 + rh; ++y)
        for (int x = x0; x < x0 + rw; ++x) albedo.at(c, y, x) = color[c];
    scene.rects.push_back({y0, x0, rh, rw});
  }

  // Shading: sum of smooth radial bumps, min-max normalized into [0.2, 1].
  std::vector<double> field(static_cast<std::size_t>(height) * width, 0.0);
  const int n_bumps = static_cast<int>(rng.uniform_int(3, 6));
  for (int i = 0; i < n_bumps; ++i) {
    const double cy = rng.uniform(0, height);
    const double cx = rng.uniform(0, width);
    const double sigma = rng.uniform(std::min(height, width) / 6.0, std::min(height, width) / 2.0);
    const double amp = rng.uniform(-1.0, 1.0);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        field[static_cast<std::size_t>(y) * width + x] +=
            amp * std::exp(-d2 / (2.0 * sigma * sigma));
      }
  }
  const auto [mn_it, mx_it] = std::minmax_element(field.begin(), field.end());
  const double mn = *mn_it, mx = *mx_it;
  const double range = mx - mn;
  Image shading(3, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double t = range > 1e-12 ? (field[static_cast<std::size_t>(y) * width + x] - mn) / range : 0.5;
      const float v = static_cast<float>(0.2 + 0.8 * t);
      for (int c = 0; c < 3; ++c) shading.at(c, y, x) = v;
    }

  p.albedo = std::move(albedo);
  p.shading = std::move(shading);
  p.input = hadamard(p.albedo, p.shading);
  return scene;
}

SamplePair synth_mondrian(std::uint64_t seed, int height, int width) {
  return synth_mondrian_scene(seed, height, width).pair;
}

Image edge_aware_smooth(const Image& img, double strength) {
  check(strength >= 0.0, "edge_aware_smooth: strength must be >= 0");
  if (strength == 0.0) return img;
  BilateralParams p;
  p.sigma_s = 2.0 * strength;
  p.adaptive_sigma_r = true;
  p.window = 2 * static_cast<int>(std::ceil(2.0 * p.sigma_s)) + 1;
  p.window = std::min(p.window, 2 * std::min(img.height, img.width) - 1) | 1;
  Image out = img;
  for (int pass = 0; pass < 3; ++pass) out = joint_bilateral_filter(out, out, p);
  return out;
}

std::vector<SamplePair> self_augment(const LapPyrNet<float>& albedo_net,
                                     const LapPyrNet<float>& shading_net,
                                     const std::vector<Image>& unlabeled, double strength,
                                     const std::vector<std::string>& ids) {
  check(ids.empty() || ids.size() == unlabeled.size(),
        "self_augment: id list length must match the image list");
  std::vector<SamplePair> out;
  out.reserve(unlabeled.size());
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    auto [pred_albedo, pred_shading] = decompose(albedo_net, shading_net, unlabeled[i]);
    SamplePair p;
    p.id = ids.empty() ? "aug" + std::to_string(i) : ids[i];
    p.albedo = edge_aware_smooth(clamp_min(pred_albedo, 0.0f), strength);
    p.shading = edge_aware_smooth(clamp_min(pred_shading, 0.0f), strength);
    p.input = hadamard(p.albedo, p.shading);
    out.push_back(std::move(p));
  }
  return out;
}

std::string write_triples(const std::string& dir, const std::vector<SamplePair>& pairs,
                          const std::string& manifest_name) {
  fs::create_directories(dir);
  const std::string manifest_path = (fs::path(dir) / manifest_name).string();
  std::ofstream manifest(manifest_path);
  if (!manifest) throw DataError("cannot write " + manifest_path);
  for (const auto& p : pairs) {
    const std::string input_name = p.id + "_input.pfm";
    const std::string albedo_name = p.id + "_albedo.pfm";
    const std::string shading_name = p.id + "_shading.pfm";
    write_pfm((fs::path(dir) / input_name).string(), p.input);
    write_pfm((fs::path(dir) / albedo_name).string(), p.albedo);
    write_pfm((fs::path(dir) / shading_name).string(), p.shading);
    manifest << p.id << '\t' << (p.scene.empty() ? "-" : p.scene) << '\t' << input_name
             << '\t' << albedo_name << '\t' << shading_name << '\n';
  }
  if (!manifest) throw DataError("short write to " + manifest_path);
  return manifest_path;
}

}  // namespace lappyr
