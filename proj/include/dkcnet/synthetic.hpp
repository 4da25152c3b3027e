#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dkcnet/dataset.hpp"
#include "dkcnet/image.hpp"

namespace dkcnet {

/// Half-open pixel box [y0, y1) x [x0, x1) covered by one class motif.
struct MotifBox {
  std::size_t cls = 0;
  std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;

  bool contains(std::size_t y, std::size_t x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
};

struct SyntheticSample {
  Image image;
  LabelBits label{};
  std::vector<MotifBox> motifs;
};

struct SyntheticOptions {
  std::size_t size = 224;
  /// Extra two-class composites, as a fraction of the single-class count.
  double composite_fraction = 0.0;
  double noise = 0.02;
  /// Motif side as a fraction of the image side.
  double motif_fraction = 0.25;
};

/// Side length of a motif for a given image size.
std::size_t motif_extent(std::size_t size, double fraction = 0.25);

/// Noise-free rendering of class `cls`'s motif on the fundus background, as
/// an extent x extent patch.
Image motif_template(std::size_t cls, std::size_t size, double fraction = 0.25);

/// Fundus-like disk touching all four borders (so the FOV crop keeps the full
/// frame) carrying one motif per class in `classes` at random, non-overlapping
/// positions inside the disk.
SyntheticSample render_synthetic(const std::vector<std::size_t>& classes, Rng& rng,
                                 const SyntheticOptions& opt = {});

/// n single-class samples per class in class order, then the composites.
std::vector<SyntheticSample> generate_synthetic_dataset(std::size_t n_per_class, std::uint64_t seed,
                                                        const SyntheticOptions& opt = {});

/// Diagnostic phrase used for each class in synthetic keyword strings.
const char* synthetic_keyword(std::size_t cls);

struct SyntheticCorpus {
  std::filesystem::path manifest;  // pair sheet
  std::filesystem::path motifs;    // id,side,class,y0,x0,y1,x1
  std::size_t pairs = 0;
  std::size_t artifact_eyes = 0;
};

/// Writes images/<id>_<side>.png, manifest.csv and motifs.csv under `dir`.
/// Consecutive samples form a left/right pair; a fraction of eyes is tagged
/// with a removal phrase so the artifact filter has work to do.
SyntheticCorpus write_synthetic_corpus(const std::filesystem::path& dir, std::size_t n_per_class,
                                       std::uint64_t seed, const SyntheticOptions& opt = {},
                                       double artifact_fraction = 0.0);

/// Motif boxes keyed by "<id>_<side>".
std::map<std::string, std::vector<MotifBox>> read_motif_boxes(const std::filesystem::path& path);

}  // namespace dkcnet
