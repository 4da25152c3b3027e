#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dkcnet/augment.hpp"
#include "dkcnet/matrix.hpp"

namespace dkcnet {

inline constexpr std::size_t kNumClasses = 8;
/// Column names and order of the label bits.
inline constexpr std::array<const char*, kNumClasses> kClassNames{"N", "D", "G", "C",
                                                                  "A", "H", "M", "O"};
std::optional<std::size_t> class_index(std::string_view name);

using LabelBits = std::array<std::uint8_t, kNumClasses>;

enum class Side { kLeft, kRight };
const char* side_name(Side s);
Side parse_side(std::string_view s);

/// One row of the paired input sheet.
struct PairRecord {
  std::string id;
  std::string left_image;
  std::string right_image;
  std::string left_keywords;
  std::string right_keywords;
  LabelBits labels{};  // pair-level labels as shipped; not used for per-eye labelling
};

struct EyeRecord {
  std::string id;
  Side side = Side::kLeft;
  std::string image;
  std::vector<std::string> keywords;
  LabelBits label{};
  AugmentOp augmentation;  // kNone for originals
  std::uint64_t seed = 0;
  int pool = -1;  // class pool that produced the record after balancing

  std::string key() const;  // "<id>_<side>"
};

/// Ordered (pattern -> class) rules plus removal patterns. Matching is
/// case-insensitive substring search inside each keyword.
struct KeywordMap {
  struct Rule {
    std::string pattern;
    std::size_t cls = 0;
  };
  std::vector<Rule> rules;
  std::vector<std::string> artifacts;

  /// Throws ConfigError on empty patterns or on a pattern used both ways.
  void validate() const;
};

/// Seeded with the class names, the common diagnostic phrases and the four
/// removal phrases ("low-quality image", "optical disk photographically
/// invisible", "lens dust", "image offset") plus their usual variants.
KeywordMap default_keyword_map();
/// Text form: one "LABEL|pattern" per line, LABEL in N D G C A H M O or
/// ARTIFACT; blank lines and lines starting with '#' are skipped.
KeywordMap parse_keyword_map(std::string_view text);
KeywordMap load_keyword_map(const std::filesystem::path& path);
std::string format_keyword_map(const KeywordMap& map);

/// Splits on ',', ';' and the full-width comma, trimming whitespace.
std::vector<std::string> split_keywords(std::string_view text);

enum class EyeOutcome { kKept, kRemoved, kUnmapped, kMissing };

struct EyeLabelResult {
  EyeOutcome outcome = EyeOutcome::kMissing;
  std::optional<EyeRecord> record;  // set unless the eye is missing
};

EyeLabelResult label_eye(const std::string& id, Side side, const std::string& image,
                         std::string_view keywords, const KeywordMap& map);

struct PairSplit {
  EyeLabelResult left;
  EyeLabelResult right;
};

/// Per-eye labels from each eye's own keywords. An eye whose image path and
/// keywords are both empty is reported missing.
PairSplit split_pair_labels(const PairRecord& pair, const KeywordMap& map);

struct SplitSummary {
  std::vector<EyeRecord> kept;
  std::vector<EyeRecord> removed;
  std::vector<EyeRecord> unmapped;
  std::array<std::size_t, kNumClasses> histogram{};  // kept eyes per class
};

SplitSummary split_all(const std::vector<PairRecord>& pairs, const KeywordMap& map);

/// Minimal RFC 4180 reader: quoted fields, doubled quotes, CRLF tolerated.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);
std::string csv_escape(std::string_view field);

/// Pair sheet with header id, left_image_path, right_image_path,
/// left_keywords, right_keywords, N, D, G, C, A, H, M, O.
std::vector<PairRecord> read_pair_manifest(const std::filesystem::path& path);
void write_pair_manifest(const std::filesystem::path& path, const std::vector<PairRecord>& pairs);

/// Eye-level sheet: the pair columns (only the record's own side filled in)
/// followed by side, augmentation, seed and pool.
std::vector<EyeRecord> read_eye_manifest(const std::filesystem::path& path);
void write_eye_manifest(const std::filesystem::path& path, const std::vector<EyeRecord>& records);

/// Image paths in manifests may be relative to the manifest's directory.
std::filesystem::path resolve_image_path(const std::filesystem::path& manifest,
                                         const std::string& image);

enum class BalanceMode { kNone, kOversample, kUndersample };
enum class OversampleRule {
  kTableConsistent,  // M = N * k for k >= 1, M = N for k = 0
  kLiteral,          // M = N * (1 + k)
};

struct ClassPlan {
  BalanceMode mode = BalanceMode::kNone;
  std::size_t k = 0;
  std::size_t source = 0;  // N
  std::size_t target = 0;  // M
};

struct BalancePlan {
  std::array<ClassPlan, kNumClasses> classes{};
  OversampleRule rule = OversampleRule::kTableConsistent;
};

using ClassCountsArray = std::array<std::size_t, kNumClasses>;
using CbfTable = std::array<std::size_t, kNumClasses>;

/// Classes with k == 0 keep M = N under either rule.
BalancePlan plan_oversample(const ClassCountsArray& counts, const CbfTable& cbf,
                            OversampleRule rule = OversampleRule::kTableConsistent);
/// M = floor(N / k). Throws ArgumentError when any k is zero.
BalancePlan plan_undersample(const ClassCountsArray& counts, const CbfTable& cbf);

ClassCountsArray class_counts(const std::vector<EyeRecord>& records);
/// Counts by `pool` (records without a pool count under every label bit).
ClassCountsArray pool_counts(const std::vector<EyeRecord>& records);

/// Builds one pool per class from every record carrying that label, sorted by
/// key, then fills it to the plan target. Oversampled pools keep each original
/// and append augmentations from the priority list; undersampled pools keep a
/// seeded uniform subset. A multi-label record appears once in each of its
/// classes' pools. Throws ArgumentError if the plan disagrees with the pool
/// sizes or needs more than the available augmentations per image.
std::vector<EyeRecord> execute_balance(const std::vector<EyeRecord>& records,
                                       const BalancePlan& plan, std::uint64_t seed);

/// Table-style text: class, samples, CBF and resulting samples per class.
std::string format_balance_table(const BalancePlan& plan);

Matrix label_matrix(const std::vector<EyeRecord>& records);

/// FOV crop followed by a square resize.
Image preprocess_image(const Image& img, std::size_t size);
/// Loads the record's image (relative to `manifest`), applies its augmentation
/// and resizes to size x size.
Image materialize(const EyeRecord& rec, const std::filesystem::path& manifest, std::size_t size);

}  // namespace dkcnet
