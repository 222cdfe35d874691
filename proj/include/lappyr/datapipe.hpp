#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lappyr/image.hpp"
#include "lappyr/network.hpp"
#include "lappyr/rng.hpp"

namespace lappyr {

// A training triple. For synthesized and augmented pairs the product
// constraint input == albedo * shading holds bit-exactly at creation.
struct SamplePair {
  std::string id;
  std::string scene;  // empty when unknown
  Image input;
  Image albedo;
  Image shading;
};

enum class SplitMode { none, image_split, scene_split };

struct ManifestEntry {
  std::string id;
  std::string scene;
  std::string input_path;
  std::string albedo_path;
  std::string shading_path;
  int height = 0;
  int width = 0;
};

// Manifest line format (tab separated, scene may be "-"):
//   id <TAB> scene <TAB> input_path <TAB> albedo_path <TAB> shading_path
// Paths are resolved relative to the manifest's directory. Extents are
// validated from image headers at load time; pixels are read lazily.
class Dataset {
 public:
  Dataset() = default;

  static Dataset load_manifest(const std::string& path);
  static Dataset from_pairs(std::vector<SamplePair> pairs);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<ManifestEntry>& entries() const { return entries_; }
  bool has_scenes() const;

  // Loads (and caches) the decoded triple.
  const SamplePair& pair(std::size_t index) const;

  Dataset subset(const std::vector<std::size_t>& indices) const;

 private:
  std::vector<ManifestEntry> entries_;
  std::string base_dir_;
  bool in_memory_ = false;
  std::shared_ptr<std::vector<std::optional<SamplePair>>> cache_;
};

std::pair<Dataset, Dataset> split(const Dataset& ds, SplitMode mode, std::uint64_t seed);

// Random scale in [scale_min, scale_max] (bilinear), random crop, random
// horizontal flip; one geometric transform per triple. After any resampling
// the input is recomputed as albedo * shading so the product constraint
// survives interpolation.
std::vector<SamplePair> sample_batch(const Dataset& ds, Rng& rng, int batch, int crop,
                                     double scale_min, double scale_max, double flip_p);

// Piecewise-constant color rectangles times a smooth positive field in
// [0.2, 1]; input is their exact product.
SamplePair synth_mondrian(std::uint64_t seed, int height, int width);

struct MondrianScene {
  SamplePair pair;
  std::vector<std::array<int, 4>> rects;  // y0, x0, h, w as painted
};
MondrianScene synth_mondrian_scene(std::uint64_t seed, int height, int width);

// Iterated joint-bilateral self-filtering (3 passes, sigma_s = 2 * strength,
// adaptive sigma_r). Suppresses small details, preserves strong edges.
// strength 0 is the identity.
Image edge_aware_smooth(const Image& img, double strength);

// Predict, smooth, and re-synthesize exact pairs from unlabeled images.
std::vector<SamplePair> self_augment(const LapPyrNet<float>& albedo_net,
                                     const LapPyrNet<float>& shading_net,
                                     const std::vector<Image>& unlabeled, double strength,
                                     const std::vector<std::string>& ids = {});

// Augmentation sizing policy: twice the labeled training size.
inline std::size_t augmentation_target_size(std::size_t labeled) { return 2 * labeled; }

// Writes PFM triples plus a manifest into a directory; returns the manifest path.
std::string write_triples(const std::string& dir, const std::vector<SamplePair>& pairs,
                          const std::string& manifest_name = "manifest.tsv");

}  // namespace lappyr
