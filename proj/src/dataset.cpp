#include "dkcnet/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "dkcnet/errors.hpp"

namespace dkcnet {

std::optional<std::size_t> class_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumClasses; ++i)
    if (name == kClassNames[i]) return i;
  return std::nullopt;
}

const char* side_name(Side s) { return s == Side::kLeft ? "left" : "right"; }

Side parse_side(std::string_view s) {
  if (s == "left") return Side::kLeft;
  if (s == "right") return Side::kRight;
  throw DataError("unknown side '" + std::string(s) + "'");
}

std::string EyeRecord::key() const { return id + "_" + side_name(side); }

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
}

}  // namespace

void KeywordMap::validate() const {
  std::set<std::string> classes;
  for (const auto& r : rules) {
    if (trim(r.pattern).empty()) throw ConfigError("keyword map: empty class pattern");
    if (r.cls >= kNumClasses) throw ConfigError("keyword map: class index out of range");
    classes.insert(lower(r.pattern));
  }
  for (const auto& a : artifacts) {
    if (trim(a).empty()) throw ConfigError("keyword map: empty artifact pattern");
    if (classes.count(lower(a))) {
      throw ConfigError("keyword map: '" + a + "' is both a class and an artifact pattern");
    }
  }
}

KeywordMap default_keyword_map() {
  static const char* kText = R"(# label|pattern, case-insensitive substring match per keyword
N|normal fundus
D|diabetic retinopathy
D|non proliferative retinopathy
D|nonproliferative retinopathy
D|proliferative retinopathy
G|glaucoma
C|cataract
A|age-related macular degeneration
A|macular degeneration
H|hypertensive retinopathy
H|hypertensive
M|pathological myopia
M|myopia retinopathy
M|myopic
O|drusen
O|epiretinal membrane
O|vitreous degeneration
O|laser spot
O|retinal vein occlusion
O|retinal artery occlusion
O|retinal pigmentation
O|chorioretinal atrophy
O|myelinated nerve fibers
O|refractive media opacity
O|tessellated fundus
O|spotted membranous change
O|retinitis pigmentosa
O|maculopathy
O|optic disc edema
O|retinal detachment
O|macular hole
O|central serous chorioretinopathy
O|optic nerve atrophy
O|retinochoroidal coloboma
O|post retinal laser surgery
ARTIFACT|low-quality image
ARTIFACT|low image quality
ARTIFACT|optical disk photographically invisible
ARTIFACT|optic disk photographically invisible
ARTIFACT|optic disc photographically invisible
ARTIFACT|lens dust
ARTIFACT|image offset
ARTIFACT|no fundus image
ARTIFACT|anterior segment image
)";
  return parse_keyword_map(kText);
}

KeywordMap parse_keyword_map(std::string_view text) {
  KeywordMap map;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto bar = t.find('|');
    if (bar == std::string::npos) {
      throw ConfigError("keyword map line " + std::to_string(lineno) + ": expected LABEL|pattern");
    }
    const std::string label = trim(t.substr(0, bar));
    const std::string pattern = trim(t.substr(bar + 1));
    if (label == "ARTIFACT") {
      map.artifacts.push_back(pattern);
    } else if (auto c = class_index(label)) {
      map.rules.push_back({pattern, *c});
    } else {
      throw ConfigError("keyword map line " + std::to_string(lineno) + ": unknown label '" +
                        label + "'");
    }
  }
  map.validate();
  return map;
}

KeywordMap load_keyword_map(const std::filesystem::path& path) {
  return parse_keyword_map(read_file(path));
}

std::string format_keyword_map(const KeywordMap& map) {
  std::string out;
  for (const auto& r : map.rules) out += std::string(kClassNames[r.cls]) + "|" + r.pattern + "\n";
  for (const auto& a : map.artifacts) out += "ARTIFACT|" + a + "\n";
  return out;
}

std::vector<std::string> split_keywords(std::string_view text) {
  static const std::string kWideComma = "\xEF\xBC\x8C";
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    std::string t = trim(cur);
    if (!t.empty()) out.push_back(std::move(t));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == ',' || text[i] == ';') {
      flush();
    } else if (text.substr(i, kWideComma.size()) == kWideComma) {
      flush();
      i += kWideComma.size() - 1;
    } else {
      cur += text[i];
    }
  }
  flush();
  return out;
}

EyeLabelResult label_eye(const std::string& id, Side side, const std::string& image,
                         std::string_view keywords, const KeywordMap& map) {
  EyeLabelResult res;
  EyeRecord rec;
  rec.id = id;
  rec.side = side;
  rec.image = image;
  rec.keywords = split_keywords(keywords);
  if (rec.keywords.empty() && image.empty()) return res;

  bool artifact = false, matched = false;
  for (const auto& kw : rec.keywords) {
    const std::string k = lower(kw);
    for (const auto& a : map.artifacts)
      if (k.find(lower(a)) != std::string::npos) artifact = true;
    for (const auto& r : map.rules) {
      if (k.find(lower(r.pattern)) != std::string::npos) {
        rec.label[r.cls] = 1;
        matched = true;
      }
    }
  }
  if (artifact) {
    rec.label = {};
    res.outcome = EyeOutcome::kRemoved;
  } else {
    res.outcome = matched ? EyeOutcome::kKept : EyeOutcome::kUnmapped;
  }
  res.record = std::move(rec);
  return res;
}

PairSplit split_pair_labels(const PairRecord& pair, const KeywordMap& map) {
  return {label_eye(pair.id, Side::kLeft, pair.left_image, pair.left_keywords, map),
          label_eye(pair.id, Side::kRight, pair.right_image, pair.right_keywords, map)};
}

SplitSummary split_all(const std::vector<PairRecord>& pairs, const KeywordMap& map) {
  SplitSummary s;
  for (const auto& p : pairs) {
    const PairSplit sp = split_pair_labels(p, map);
    for (const EyeLabelResult* r : {&sp.left, &sp.right}) {
      switch (r->outcome) {
        case EyeOutcome::kKept:
          for (std::size_t c = 0; c < kNumClasses; ++c) s.histogram[c] += r->record->label[c];
          s.kept.push_back(*r->record);
          break;
        case EyeOutcome::kRemoved: s.removed.push_back(*r->record); break;
        case EyeOutcome::kUnmapped: s.unmapped.push_back(*r->record); break;
        case EyeOutcome::kMissing: break;
      }
    }
  }
  return s;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, field_started = false;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_row();
    } else if (c == '\r') {
      if (i + 1 < text.size() && text[i + 1] == '\n') continue;
      end_row();
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw DataError("csv: unterminated quoted field");
  if (field_started || !field.empty() || !row.empty()) end_row();
  return rows;
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

namespace {

const std::vector<std::string>& pair_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c{"id", "left_image_path", "right_image_path", "left_keywords",
                               "right_keywords"};
    for (const char* n : kClassNames) c.emplace_back(n);
    return c;
  }();
  return cols;
}

const std::vector<std::string>& eye_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c = pair_columns();
    for (const char* n : {"side", "augmentation", "seed", "pool"}) c.emplace_back(n);
    return c;
  }();
  return cols;
}

struct Table {
  std::map<std::string, std::size_t> col;
  std::vector<std::vector<std::string>> rows;
};

Table read_table(const std::filesystem::path& path, const std::vector<std::string>& required) {
  auto rows = parse_csv(read_file(path));
  if (rows.empty()) throw DataError(path.string() + ": empty manifest");
  Table t;
  for (std::size_t i = 0; i < rows[0].size(); ++i) t.col[trim(rows[0][i])] = i;
  for (const auto& r : required)
    if (!t.col.count(r)) throw DataError(path.string() + ": missing column '" + r + "'");
  t.rows.assign(rows.begin() + 1, rows.end());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.rows[i].size() != rows[0].size()) {
      throw DataError(path.string() + " row " + std::to_string(i + 2) + ": expected " +
                      std::to_string(rows[0].size()) + " fields, got " +
                      std::to_string(t.rows[i].size()));
    }
  }
  return t;
}

std::uint8_t parse_bit(const std::string& s, const std::filesystem::path& path, std::size_t row) {
  const std::string t = trim(s);
  if (t == "0") return 0;
  if (t == "1") return 1;
  throw DataError(path.string() + " row " + std::to_string(row) + ": label '" + s +
                  "' is not 0 or 1");
}

std::string join_keywords(const std::vector<std::string>& kws) {
  std::string out;
  for (std::size_t i = 0; i < kws.size(); ++i) out += (i ? ", " : "") + kws[i];
  return out;
}

void write_row(std::ostringstream& os, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) os << (i ? "," : "") << csv_escape(fields[i]);
  os << "\n";
}

}  // namespace

std::vector<PairRecord> read_pair_manifest(const std::filesystem::path& path) {
  const Table t = read_table(path, pair_columns());
  std::vector<PairRecord> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    PairRecord p;
    p.id = trim(r[t.col.at("id")]);
    if (p.id.empty()) throw DataError(path.string() + " row " + std::to_string(i + 2) + ": empty id");
    p.left_image = trim(r[t.col.at("left_image_path")]);
    p.right_image = trim(r[t.col.at("right_image_path")]);
    p.left_keywords = r[t.col.at("left_keywords")];
    p.right_keywords = r[t.col.at("right_keywords")];
    for (std::size_t c = 0; c < kNumClasses; ++c)
      p.labels[c] = parse_bit(r[t.col.at(kClassNames[c])], path, i + 2);
    out.push_back(std::move(p));
  }
  return out;
}

void write_pair_manifest(const std::filesystem::path& path, const std::vector<PairRecord>& pairs) {
  std::ostringstream os;
  write_row(os, pair_columns());
  for (const auto& p : pairs) {
    std::vector<std::string> f{p.id, p.left_image, p.right_image, p.left_keywords, p.right_keywords};
    for (auto b : p.labels) f.push_back(std::to_string(b));
    write_row(os, f);
  }
  write_file(path, os.str());
}

std::vector<EyeRecord> read_eye_manifest(const std::filesystem::path& path) {
  const Table t = read_table(path, eye_columns());
  std::vector<EyeRecord> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const std::size_t row = i + 2;
    EyeRecord e;
    e.id = trim(r[t.col.at("id")]);
    try {
      e.side = parse_side(trim(r[t.col.at("side")]));
    } catch (const DataError& err) {
      throw DataError(path.string() + " row " + std::to_string(row) + ": " + err.what());
    }
    const bool left = e.side == Side::kLeft;
    e.image = trim(r[t.col.at(left ? "left_image_path" : "right_image_path")]);
    e.keywords = split_keywords(r[t.col.at(left ? "left_keywords" : "right_keywords")]);
    for (std::size_t c = 0; c < kNumClasses; ++c)
      e.label[c] = parse_bit(r[t.col.at(kClassNames[c])], path, row);
    e.augmentation = AugmentOp::parse(trim(r[t.col.at("augmentation")]));
    const std::string seed = trim(r[t.col.at("seed")]);
    try {
      e.seed = seed.empty() ? 0 : std::stoull(seed);
    } catch (const std::exception&) {
      throw DataError(path.string() + " row " + std::to_string(row) + ": bad seed '" + seed + "'");
    }
    const std::string pool = trim(r[t.col.at("pool")]);
    if (!pool.empty()) {
      auto c = class_index(pool);
      if (!c) throw DataError(path.string() + " row " + std::to_string(row) + ": bad pool '" + pool + "'");
      e.pool = static_cast<int>(*c);
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_eye_manifest(const std::filesystem::path& path, const std::vector<EyeRecord>& records) {
  std::ostringstream os;
  write_row(os, eye_columns());
  for (const auto& e : records) {
    const bool left = e.side == Side::kLeft;
    const std::string kw = join_keywords(e.keywords);
    std::vector<std::string> f{e.id, left ? e.image : "", left ? "" : e.image, left ? kw : "",
                               left ? "" : kw};
    for (auto b : e.label) f.push_back(std::to_string(b));
    f.push_back(side_name(e.side));
    f.push_back(e.augmentation.name());
    f.push_back(std::to_string(e.seed));
    f.push_back(e.pool >= 0 ? kClassNames[static_cast<std::size_t>(e.pool)] : "");
    write_row(os, f);
  }
  write_file(path, os.str());
}

std::filesystem::path resolve_image_path(const std::filesystem::path& manifest,
                                         const std::string& image) {
  const std::filesystem::path p(image);
  if (p.is_absolute()) return p;
  return manifest.parent_path() / p;
}

BalancePlan plan_oversample(const ClassCountsArray& counts, const CbfTable& cbf,
                            OversampleRule rule) {
  BalancePlan plan;
  plan.rule = rule;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    ClassPlan& p = plan.classes[c];
    p.k = cbf[c];
    p.source = counts[c];
    if (cbf[c] == 0) {
      p.mode = BalanceMode::kNone;
      p.target = counts[c];
    } else {
      p.mode = BalanceMode::kOversample;
      p.target = rule == OversampleRule::kTableConsistent ? counts[c] * cbf[c] : counts[c] * (1 + cbf[c]);
    }
  }
  return plan;
}

BalancePlan plan_undersample(const ClassCountsArray& counts, const CbfTable& cbf) {
  BalancePlan plan;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (cbf[c] == 0) {
      throw ArgumentError(std::string("undersampling needs k >= 1 (class ") + kClassNames[c] + ")");
    }
    ClassPlan& p = plan.classes[c];
    p.mode = BalanceMode::kUndersample;
    p.k = cbf[c];
    p.source = counts[c];
    p.target = counts[c] / cbf[c];
  }
  return plan;
}

ClassCountsArray class_counts(const std::vector<EyeRecord>& records) {
  ClassCountsArray out{};
  for (const auto& r : records)
    for (std::size_t c = 0; c < kNumClasses; ++c) out[c] += r.label[c];
  return out;
}

ClassCountsArray pool_counts(const std::vector<EyeRecord>& records) {
  ClassCountsArray out{};
  for (const auto& r : records) {
    if (r.pool >= 0) {
      ++out[static_cast<std::size_t>(r.pool)];
    } else {
      for (std::size_t c = 0; c < kNumClasses; ++c) out[c] += r.label[c];
    }
  }
  return out;
}

std::vector<EyeRecord> execute_balance(const std::vector<EyeRecord>& records,
                                       const BalancePlan& plan, std::uint64_t seed) {
  std::vector<EyeRecord> originals;
  for (const auto& r : records)
    if (r.augmentation.kind == AugmentKind::kNone) originals.push_back(r);
  if (originals.size() != records.size()) {
    throw ArgumentError("execute_balance expects unaugmented records");
  }
  std::sort(originals.begin(), originals.end(),
            [](const EyeRecord& a, const EyeRecord& b) { return a.key() < b.key(); });
  for (std::size_t i = 1; i < originals.size(); ++i) {
    if (originals[i].key() == originals[i - 1].key()) {
      throw ArgumentError("execute_balance: duplicate record " + originals[i].key());
    }
  }

  std::vector<EyeRecord> out;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::vector<const EyeRecord*> pool;
    for (const auto& r : originals)
      if (r.label[c]) pool.push_back(&r);
    const ClassPlan& p = plan.classes[c];
    const std::string cname = kClassNames[c];
    if (pool.size() != p.source) {
      throw ArgumentError("execute_balance: plan expects " + std::to_string(p.source) +
                          " records of class " + cname + ", found " + std::to_string(pool.size()));
    }
    auto emit = [&](const EyeRecord& r) {
      EyeRecord e = r;
      e.pool = static_cast<int>(c);
      out.push_back(std::move(e));
    };

    switch (p.mode) {
      case BalanceMode::kNone:
        if (p.target != p.source) throw ArgumentError("execute_balance: class " + cname + " has no mode but M != N");
        for (const auto* r : pool) emit(*r);
        break;
      case BalanceMode::kOversample: {
        if (p.source == 0) {
          if (p.target != 0) throw ArgumentError("execute_balance: cannot oversample empty class " + cname);
          break;
        }
        if (p.target % p.source != 0 || p.target < p.source) {
          throw ArgumentError("execute_balance: oversample target of class " + cname +
                              " is not a whole multiple of its size");
        }
        const std::size_t extra = p.target / p.source - 1;
        if (extra > kMaxAugmentations) {
          throw ArgumentError("execute_balance: class " + cname + " needs " + std::to_string(extra) +
                              " augmentations per image, only " +
                              std::to_string(kMaxAugmentations) + " are available");
        }
        const auto& prio = augmentation_priority();
        for (const auto* r : pool) {
          emit(*r);
          const std::uint64_t base = Rng::mix(seed, Rng::hash(r->key() + "#" + cname));
          for (std::size_t j = 0; j < extra; ++j) {
            EyeRecord e = *r;
            e.augmentation = prio[j];
            e.seed = Rng::mix(base, j);
            emit(e);
          }
        }
        break;
      }
      case BalanceMode::kUndersample: {
        if (p.target > p.source) throw ArgumentError("execute_balance: undersample target exceeds class " + cname);
        std::vector<std::size_t> idx(pool.size());
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(Rng::mix(seed, Rng::hash("undersample#" + cname)));
        for (std::size_t i = 0; i < p.target; ++i) {
          const std::size_t j = i + rng.below(idx.size() - i);
          std::swap(idx[i], idx[j]);
        }
        idx.resize(p.target);
        std::sort(idx.begin(), idx.end());
        for (std::size_t i : idx) emit(*pool[i]);
        break;
      }
    }
  }
  return out;
}

std::string format_balance_table(const BalancePlan& plan) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "class" << std::right << std::setw(9) << "samples"
     << std::setw(6) << "mode" << std::setw(5) << "cbf" << std::setw(9) << "result" << "\n";
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const ClassPlan& p = plan.classes[c];
    const char* mode = p.mode == BalanceMode::kOversample ? "over"
                       : p.mode == BalanceMode::kUndersample ? "under" : "none";
    os << std::left << std::setw(8) << kClassNames[c] << std::right << std::setw(9) << p.source
       << std::setw(6) << mode << std::setw(5) << p.k << std::setw(9) << p.target << "\n";
  }
  return os.str();
}

Matrix label_matrix(const std::vector<EyeRecord>& records) {
  Matrix m(records.size(), kNumClasses);
  for (std::size_t r = 0; r < records.size(); ++r)
    for (std::size_t c = 0; c < kNumClasses; ++c) m(r, c) = records[r].label[c];
  return m;
}

Image preprocess_image(const Image& img, std::size_t size) {
  return resize(crop_fov(img), size, size);
}

Image materialize(const EyeRecord& rec, const std::filesystem::path& manifest, std::size_t size) {
  Image img = load_image(resolve_image_path(manifest, rec.image));
  if (img.height != img.width) img = crop_fov(img);
  img = apply_augmentation(img, rec.augmentation, rec.seed);
  return resize(img, size, size);
}

}  // namespace dkcnet
