#include "dkcnet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dkcnet/errors.hpp"

namespace dkcnet {

namespace {

constexpr double kBackground[3] = {0.55, 0.25, 0.12};

struct MotifStyle {
  double rgb[3];
  enum Shape { kSolid, kRing, kHStripes, kVStripes, kChecker, kCross } shape;
};

constexpr MotifStyle kStyles[kNumClasses] = {
    {{0.10, 0.80, 0.20}, MotifStyle::kSolid},     // N
    {{0.10, 0.20, 0.90}, MotifStyle::kSolid},     // D
    {{0.95, 0.95, 0.95}, MotifStyle::kRing},      // G
    {{0.95, 0.95, 0.95}, MotifStyle::kHStripes},  // C
    {{0.95, 0.90, 0.10}, MotifStyle::kSolid},     // A
    {{0.10, 0.90, 0.90}, MotifStyle::kVStripes},  // H
    {{0.90, 0.10, 0.80}, MotifStyle::kChecker},   // M
    {{0.95, 0.95, 0.95}, MotifStyle::kCross},     // O
};

bool on_motif(const MotifStyle& s, std::size_t y, std::size_t x, std::size_t m) {
  const std::size_t t = std::max<std::size_t>(1, m / 4);
  switch (s.shape) {
    case MotifStyle::kSolid: return true;
    case MotifStyle::kRing: return y < t || x < t || y >= m - t || x >= m - t;
    case MotifStyle::kHStripes: return (y / t) % 2 == 0;
    case MotifStyle::kVStripes: return (x / t) % 2 == 0;
    case MotifStyle::kChecker: return ((y / t) + (x / t)) % 2 == 0;
    case MotifStyle::kCross: {
      const std::size_t lo = (m - t) / 2;
      return (y >= lo && y < lo + t) || (x >= lo && x < lo + t);
    }
  }
  return false;
}

bool inside_disk(std::size_t y, std::size_t x, std::size_t size) {
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  const double r = static_cast<double>(size) / 2.0;
  const double dy = static_cast<double>(y) - c, dx = static_cast<double>(x) - c;
  return dy * dy + dx * dx <= r * r;
}

}  // namespace

std::size_t motif_extent(std::size_t size, double fraction) {
  return std::max<std::size_t>(4, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(size))));
}

Image motif_template(std::size_t cls, std::size_t size, double fraction) {
  if (cls >= kNumClasses) throw ArgumentError("motif_template: class out of range");
  const std::size_t m = motif_extent(size, fraction);
  Image t(3, m, m);
  for (std::size_t y = 0; y < m; ++y)
    for (std::size_t x = 0; x < m; ++x) {
      const bool fg = on_motif(kStyles[cls], y, x, m);
      for (std::size_t c = 0; c < 3; ++c) t.at(c, y, x) = fg ? kStyles[cls].rgb[c] : kBackground[c];
    }
  return t;
}

SyntheticSample render_synthetic(const std::vector<std::size_t>& classes, Rng& rng,
                                 const SyntheticOptions& opt) {
  const std::size_t s = opt.size;
  const std::size_t m = motif_extent(s, opt.motif_fraction);
  if (s < 8) throw ArgumentError("synthetic images need at least 8x8 pixels");
  SyntheticSample out;
  out.image = Image(3, s, s, 0.0);
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      if (!inside_disk(y, x, s)) continue;
      for (std::size_t c = 0; c < 3; ++c)
        out.image.at(c, y, x) = std::clamp(kBackground[c] + opt.noise * rng.normal(), 0.0, 1.0);
    }

  // motifs stay inside the square inscribed in the disk
  const double half = static_cast<double>(s) / 2.0 / std::sqrt(2.0);
  const double mid = (static_cast<double>(s) - 1.0) / 2.0;
  const auto lo = static_cast<std::size_t>(std::ceil(mid - half));
  const auto hi = static_cast<std::size_t>(std::floor(mid + half)) + 1 - m;  // last valid origin
  if (hi < lo) throw ArgumentError("synthetic image too small for its motifs");

  for (std::size_t cls : classes)
    if (cls >= kNumClasses) throw ArgumentError("render_synthetic: class out of range");
  // place the whole set at once; a central first motif can leave no room for a second
  std::vector<MotifBox> boxes;
  for (int attempt = 0; attempt < 1000 && boxes.size() < classes.size(); ++attempt) {
    boxes.clear();
    for (std::size_t cls : classes) {
      MotifBox box;
      box.cls = cls;
      box.y0 = lo + rng.below(hi - lo + 1);
      box.x0 = lo + rng.below(hi - lo + 1);
      box.y1 = box.y0 + m;
      box.x1 = box.x0 + m;
      const bool clear = std::none_of(boxes.begin(), boxes.end(), [&](const MotifBox& o) {
        // one pixel of clearance between motifs
        return box.y0 <= o.y1 && o.y0 <= box.y1 && box.x0 <= o.x1 && o.x0 <= box.x1;
      });
      if (!clear) break;
      boxes.push_back(box);
    }
  }
  if (boxes.size() < classes.size()) throw ArgumentError("render_synthetic: no room for the requested motifs");
  for (const MotifBox& box : boxes) {
    for (std::size_t y = 0; y < m; ++y)
      for (std::size_t x = 0; x < m; ++x) {
        if (!on_motif(kStyles[box.cls], y, x, m)) continue;
        for (std::size_t c = 0; c < 3; ++c) {
          out.image.at(c, box.y0 + y, box.x0 + x) =
              std::clamp(kStyles[box.cls].rgb[c] + opt.noise * rng.normal(), 0.0, 1.0);
        }
      }
    out.label[box.cls] = 1;
  }
  out.motifs = std::move(boxes);
  return out;
}

std::vector<SyntheticSample> generate_synthetic_dataset(std::size_t n_per_class, std::uint64_t seed,
                                                        const SyntheticOptions& opt) {
  if (n_per_class == 0) throw ArgumentError("generate_synthetic_dataset: n must be at least 1");
  std::vector<SyntheticSample> out;
  for (std::size_t c = 0; c < kNumClasses; ++c)
    for (std::size_t i = 0; i < n_per_class; ++i) {
      Rng rng = Rng(seed).fork(Rng::mix(c, i));
      out.push_back(render_synthetic({c}, rng, opt));
    }
  const auto composites = static_cast<std::size_t>(
      std::llround(opt.composite_fraction * static_cast<double>(kNumClasses * n_per_class)));
  for (std::size_t i = 0; i < composites; ++i) {
    Rng rng = Rng(seed).fork(Rng::mix(Rng::hash("composite"), i));
    const std::size_t a = rng.below(kNumClasses);
    std::size_t b = rng.below(kNumClasses - 1);
    if (b >= a) ++b;
    out.push_back(render_synthetic({a, b}, rng, opt));
  }
  return out;
}

const char* synthetic_keyword(std::size_t cls) {
  static const char* kWords[kNumClasses] = {
      "normal fundus",
      "moderate non proliferative retinopathy",
      "glaucoma",
      "cataract",
      "dry age-related macular degeneration",
      "hypertensive retinopathy",
      "pathological myopia",
      "drusen",
  };
  if (cls >= kNumClasses) throw ArgumentError("synthetic_keyword: class out of range");
  return kWords[cls];
}

SyntheticCorpus write_synthetic_corpus(const std::filesystem::path& dir, std::size_t n_per_class,
                                       std::uint64_t seed, const SyntheticOptions& opt,
                                       double artifact_fraction) {
  auto samples = generate_synthetic_dataset(n_per_class, seed, opt);
  // interleave classes so a pair rarely repeats the same class twice
  Rng order_rng = Rng(seed).fork(Rng::hash("pairing"));
  for (std::size_t i = samples.size(); i > 1; --i) std::swap(samples[i - 1], samples[order_rng.below(i)]);
  if (samples.size() % 2 == 1) samples.pop_back();

  std::filesystem::create_directories(dir / "images");
  SyntheticCorpus corpus;
  corpus.manifest = dir / "manifest.csv";
  corpus.motifs = dir / "motifs.csv";
  std::vector<PairRecord> pairs;
  std::ostringstream motifs;
  motifs << "id,side,class,y0,x0,y1,x1\n";
  Rng art_rng = Rng(seed).fork(Rng::hash("artifacts"));
  for (std::size_t p = 0; p + 1 < samples.size(); p += 2) {
    std::ostringstream id;
    id << "syn" << std::setw(5) << std::setfill('0') << p / 2;
    PairRecord rec;
    rec.id = id.str();
    for (Side side : {Side::kLeft, Side::kRight}) {
      const SyntheticSample& s = samples[p + (side == Side::kLeft ? 0 : 1)];
      const std::string name = rec.id + "_" + side_name(side);
      const std::string rel = "images/" + name + ".png";
      save_image(dir / rel, s.image);
      std::string kw;
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (!s.label[c]) continue;
        if (!kw.empty()) kw += ", ";
        kw += synthetic_keyword(c);
        rec.labels[c] = 1;
      }
      if (art_rng.uniform() < artifact_fraction) {
        kw += ", lens dust";
        ++corpus.artifact_eyes;
      }
      (side == Side::kLeft ? rec.left_image : rec.right_image) = rel;
      (side == Side::kLeft ? rec.left_keywords : rec.right_keywords) = kw;
      for (const auto& b : s.motifs) {
        motifs << rec.id << "," << side_name(side) << "," << kClassNames[b.cls] << "," << b.y0
               << "," << b.x0 << "," << b.y1 << "," << b.x1 << "\n";
      }
    }
    pairs.push_back(std::move(rec));
  }
  write_pair_manifest(corpus.manifest, pairs);
  std::ofstream os(corpus.motifs);
  if (!os) throw IoError("cannot write " + corpus.motifs.string());
  os << motifs.str();
  corpus.pairs = pairs.size();
  return corpus;
}

std::map<std::string, std::vector<MotifBox>> read_motif_boxes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  const auto rows = parse_csv(ss.str());
  std::map<std::string, std::vector<MotifBox>> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 7) throw DataError(path.string() + " row " + std::to_string(i + 1) + ": expected 7 fields");
    auto cls = class_index(r[2]);
    if (!cls) throw DataError(path.string() + ": unknown class '" + r[2] + "'");
    MotifBox b;
    b.cls = *cls;
    b.y0 = std::stoul(r[3]);
    b.x0 = std::stoul(r[4]);
    b.y1 = std::stoul(r[5]);
    b.x1 = std::stoul(r[6]);
    out[r[0] + "_" + r[1]].push_back(b);
  }
  return out;
}

}  // namespace dkcnet
