#include "ssvg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssvg {

const std::vector<std::string>& vocab_words() {
  static const std::vector<std::string> words = {
      "pad",      "the",      "thing",   "of",      "left",    "right",  "above",
      "below",    "largest",  "smallest", "leftmost", "rightmost", "topmost", "bottommost",
      "circle",   "square",   "triangle", "diamond", "cross",   "red",    "green",
      "blue",     "yellow",   "purple",  "orange",  "teal",    "pink"};
  return words;
}

namespace {

constexpr double kInsetCells = 0.1;

bool is_shape_tok(int t) { return t >= vocab::kShapeBase && t < vocab::kShapeBase + kNumShapes; }
bool is_color_tok(int t) { return t >= vocab::kColorBase && t < vocab::kColorBase + kNumColors; }
int shape_tok(int shape) { return vocab::kShapeBase + shape; }
int color_tok(int color) { return vocab::kColorBase + color; }

// "the [color] <shape|thing>" reference inside a query
struct ObjRef {
  int shape = -1;  // -1 = any ("thing")
  int color = -1;  // -1 = unspecified
};

struct ParsedQuery {
  enum Kind { kAttribute, kRelational, kSuperlative } kind = kAttribute;
  ObjRef subject;
  int relation = -1;     // vocab::kLeft/kRight/kAbove/kBelow
  ObjRef reference;
  int superlative = -1;  // vocab::kLargest..kBottommost
};

bool matches_ref(const SceneObject& o, const ObjRef& r) {
  if (r.shape >= 0 && o.shape != r.shape) return false;
  if (r.color >= 0 && o.color != r.color) return false;
  return true;
}

// Consumes "[color] (shape|thing)" starting at i; returns false on bad syntax.
bool parse_ref(const std::vector<int>& t, size_t& i, ObjRef& out) {
  if (i < t.size() && is_color_tok(t[i])) {
    out.color = t[i] - vocab::kColorBase;
    ++i;
  }
  if (i < t.size() && is_shape_tok(t[i])) {
    out.shape = t[i] - vocab::kShapeBase;
    ++i;
    return true;
  }
  if (i < t.size() && t[i] == vocab::kThing) {
    out.shape = -1;
    ++i;
    return out.color >= 0 || true;
  }
  return false;
}

bool parse_query(const std::vector<int>& t, ParsedQuery& q) {
  size_t i = 0;
  if (t.empty() || t[i] != vocab::kThe) return false;
  ++i;
  if (i < t.size() && t[i] >= vocab::kLargest && t[i] <= vocab::kBottommost) {
    q.kind = ParsedQuery::kSuperlative;
    q.superlative = t[i];
    ++i;
    if (!parse_ref(t, i, q.subject)) return false;
    return i == t.size();
  }
  if (!parse_ref(t, i, q.subject)) return false;
  if (i == t.size()) {
    q.kind = ParsedQuery::kAttribute;
    return true;
  }
  if (t[i] == vocab::kLeft || t[i] == vocab::kRight) {
    q.relation = t[i];
    ++i;
    if (i >= t.size() || t[i] != vocab::kOf) return false;
    ++i;
  } else if (t[i] == vocab::kAbove || t[i] == vocab::kBelow) {
    q.relation = t[i];
    ++i;
  } else {
    return false;
  }
  if (i >= t.size() || t[i] != vocab::kThe) return false;
  ++i;
  if (!parse_ref(t, i, q.reference)) return false;
  q.kind = ParsedQuery::kRelational;
  return i == t.size();
}

bool relation_holds(const Box& a, const Box& b, int rel) {
  switch (rel) {
    case vocab::kLeft: return a.cx < b.cx;
    case vocab::kRight: return a.cx > b.cx;
    case vocab::kAbove: return a.cy < b.cy;   // row 0 is the top of the image
    case vocab::kBelow: return a.cy > b.cy;
    default: return false;
  }
}

bool matches_parsed(const Scene& scene, const ParsedQuery& q, int idx) {
  const auto& objs = scene.objects;
  const SceneObject& obj = objs[static_cast<size_t>(idx)];
  switch (q.kind) {
    case ParsedQuery::kAttribute:
      return matches_ref(obj, q.subject);
    case ParsedQuery::kRelational: {
      if (!matches_ref(obj, q.subject)) return false;
      int ref_idx = -1;
      int ref_count = 0;
      for (size_t j = 0; j < objs.size(); ++j) {
        if (matches_ref(objs[j], q.reference)) {
          ref_idx = static_cast<int>(j);
          ++ref_count;
        }
      }
      if (ref_count != 1 || ref_idx == idx) return false;
      return relation_holds(object_box(obj, scene.grid),
                            object_box(objs[static_cast<size_t>(ref_idx)], scene.grid), q.relation);
    }
    case ParsedQuery::kSuperlative: {
      if (!matches_ref(obj, q.subject)) return false;
      int candidates = 0;
      bool is_extremum = true;
      bool tie = false;
      auto key = [&](const SceneObject& o) -> double {
        const Box b = object_box(o, scene.grid);
        switch (q.superlative) {
          case vocab::kLargest: return b.w * b.h;
          case vocab::kSmallest: return -b.w * b.h;
          case vocab::kLeftmost: return -b.cx;
          case vocab::kRightmost: return b.cx;
          case vocab::kTopmost: return -b.cy;
          case vocab::kBottommost: return b.cy;
          default: return 0.0;
        }
      };
      const double self = key(obj);
      for (size_t j = 0; j < objs.size(); ++j) {
        if (!matches_ref(objs[j], q.subject)) continue;
        ++candidates;
        if (static_cast<int>(j) == idx) continue;
        const double other = key(objs[j]);
        if (other > self) is_extremum = false;
        if (other == self) tie = true;
      }
      // A superlative needs something to compare against, and a unique winner.
      return candidates >= 2 && is_extremum && !tie;
    }
  }
  return false;
}

}  // namespace

Box object_box(const SceneObject& o, int grid) {
  const double g = static_cast<double>(grid);
  Box b;
  b.cx = (o.col + o.wcells * 0.5) / g;
  b.cy = (o.row + o.hcells * 0.5) / g;
  b.w = (o.wcells - 2.0 * kInsetCells) / g;
  b.h = (o.hcells - 2.0 * kInsetCells) / g;
  return b;
}

Mat scene_features(const Scene& s) {
  const int g = s.grid;
  Mat f(g * g, kFeatDim);
  for (int r = 0; r < g; ++r) {
    for (int c = 0; c < g; ++c) {
      double* row = f.row(r * g + c);
      row[kNumShapes + kNumColors + 0] = (c + 0.5) / g;
      row[kNumShapes + kNumColors + 1] = (r + 0.5) / g;
    }
  }
  for (const auto& o : s.objects) {
    for (int r = o.row; r < o.row + o.hcells; ++r) {
      for (int c = o.col; c < o.col + o.wcells; ++c) {
        double* row = f.row(r * g + c);
        row[o.shape] = 1.0;
        row[kNumShapes + o.color] = 1.0;
      }
    }
  }
  return f;
}

bool query_matches(const Scene& scene, const std::vector<int>& tokens, int object_index) {
  ParsedQuery q;
  if (!parse_query(tokens, q)) return false;
  return matches_parsed(scene, q, object_index);
}

int count_query_matches(const Scene& scene, const std::vector<int>& tokens) {
  int n = 0;
  for (size_t i = 0; i < scene.objects.size(); ++i) {
    if (query_matches(scene, tokens, static_cast<int>(i))) ++n;
  }
  return n;
}

namespace {

bool place_objects(Rng& rng, const GenSpec& spec, Scene& scene) {
  const int g = spec.grid;
  const int n_obj = spec.min_objects + rng.uniform_int(spec.max_objects - spec.min_objects + 1);
  scene.grid = g;
  scene.objects.clear();
  std::vector<char> occupied(static_cast<size_t>(g) * g, 0);
  for (int k = 0; k < n_obj; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
      SceneObject o;
      o.wcells = 1 + rng.uniform_int(spec.max_span);
      o.hcells = 1 + rng.uniform_int(spec.max_span);
      o.col = rng.uniform_int(g - o.wcells + 1);
      o.row = rng.uniform_int(g - o.hcells + 1);
      o.shape = rng.uniform_int(kNumShapes);
      o.color = rng.uniform_int(kNumColors);
      bool free = true;
      for (int r = o.row; r < o.row + o.hcells && free; ++r)
        for (int c = o.col; c < o.col + o.wcells && free; ++c)
          if (occupied[static_cast<size_t>(r) * g + c]) free = false;
      if (!free) continue;
      for (int r = o.row; r < o.row + o.hcells; ++r)
        for (int c = o.col; c < o.col + o.wcells; ++c) occupied[static_cast<size_t>(r) * g + c] = 1;
      scene.objects.push_back(o);
      placed = true;
    }
    if (!placed) return false;
  }
  return true;
}

// All templated expressions that uniquely pick out `target` in this scene,
// bucketed by difficulty class.
struct QueryCandidates {
  std::vector<std::vector<int>> attribute;
  std::vector<std::vector<int>> relational;
  std::vector<std::vector<int>> superlative;
};

void collect_candidates(const Scene& scene, int target, QueryCandidates& out) {
  const SceneObject& t = scene.objects[static_cast<size_t>(target)];
  auto unique_for_target = [&](const std::vector<int>& toks) {
    return query_matches(scene, toks, target) && count_query_matches(scene, toks) == 1;
  };
  auto try_add = [&](std::vector<std::vector<int>>& bucket, std::vector<int> toks) {
    if (unique_for_target(toks)) bucket.push_back(std::move(toks));
  };

  try_add(out.attribute, {vocab::kThe, color_tok(t.color), shape_tok(t.shape)});
  try_add(out.attribute, {vocab::kThe, shape_tok(t.shape)});
  try_add(out.attribute, {vocab::kThe, color_tok(t.color), vocab::kThing});

  for (int sup = vocab::kLargest; sup <= vocab::kBottommost; ++sup) {
    try_add(out.superlative, {vocab::kThe, sup, shape_tok(t.shape)});
    try_add(out.superlative, {vocab::kThe, sup, vocab::kThing});
  }

  for (size_t j = 0; j < scene.objects.size(); ++j) {
    if (static_cast<int>(j) == target) continue;
    const SceneObject& r = scene.objects[j];
    for (int rel : {vocab::kLeft, vocab::kRight, vocab::kAbove, vocab::kBelow}) {
      for (int subj_color : {0, 1}) {
        for (int ref_color : {0, 1}) {
          std::vector<int> toks = {vocab::kThe};
          if (subj_color) toks.push_back(color_tok(t.color));
          toks.push_back(shape_tok(t.shape));
          toks.push_back(rel);
          if (rel == vocab::kLeft || rel == vocab::kRight) toks.push_back(vocab::kOf);
          toks.push_back(vocab::kThe);
          if (ref_color) toks.push_back(color_tok(r.color));
          toks.push_back(shape_tok(r.shape));
          try_add(out.relational, std::move(toks));
        }
      }
    }
  }
}

}  // namespace

std::vector<Sample> generate_dataset(const GenSpec& spec) {
  if (spec.n < 10) throw std::invalid_argument("generate_dataset: n must be >= 10");
  if (spec.grid < 2) throw std::invalid_argument("generate_dataset: grid must be >= 2");
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(spec.n));
  for (int i = 0; i < spec.n; ++i) {
    Rng rng(substream(spec.seed, "sample", static_cast<uint64_t>(i)));
    Sample s;
    s.id = i;
    bool done = false;
    for (int attempt = 0; attempt < 1000 && !done; ++attempt) {
      if (!place_objects(rng, spec, s.scene)) continue;
      const int target = rng.uniform_int(static_cast<int>(s.scene.objects.size()));
      QueryCandidates cand;
      collect_candidates(s.scene, target, cand);
      // Difficulty mix: attribute-style 70%, relational 20%, superlative 10%.
      const double roll = rng.uniform01();
      const std::vector<std::vector<int>>* bucket = nullptr;
      if (roll < 0.70) bucket = &cand.attribute;
      else if (roll < 0.90) bucket = &cand.relational;
      else bucket = &cand.superlative;
      if (bucket->empty()) {
        for (const auto* b : {&cand.relational, &cand.attribute, &cand.superlative}) {
          if (!b->empty()) {
            bucket = b;
            break;
          }
        }
      }
      if (bucket->empty()) continue;
      s.query.tokens = (*bucket)[static_cast<size_t>(rng.uniform_int(static_cast<int>(bucket->size())))];
      s.query.target_index = target;
      s.gold = object_box(s.scene.objects[static_cast<size_t>(target)], spec.grid);
      done = true;
    }
    if (!done) {
      throw std::runtime_error("generate_dataset: no discriminative query after 1000 scene retries (sample " +
                               std::to_string(i) + ")");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::pair<std::vector<Sample>, std::vector<UnlabeledSample>> split(const std::vector<Sample>& data,
                                                                   const SplitSpec& spec) {
  const size_t n = data.size();
  const long long k = std::llround(spec.label_fraction * static_cast<double>(n));
  if (k < 1) throw std::invalid_argument("split: label fraction yields zero labeled samples");
  std::vector<size_t> perm(n);
  for (size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(substream(spec.seed, "split"));
  rng.shuffle(perm);
  std::vector<Sample> labeled;
  std::vector<UnlabeledSample> unlabeled;
  for (size_t i = 0; i < n; ++i) {
    const Sample& s = data[perm[i]];
    if (i < static_cast<size_t>(k)) {
      labeled.push_back(s);
    } else {
      unlabeled.push_back(UnlabeledSample{s.id, s.scene, s.query});
    }
  }
  auto by_id = [](const auto& a, const auto& b) { return a.id < b.id; };
  std::sort(labeled.begin(), labeled.end(), by_id);
  std::sort(unlabeled.begin(), unlabeled.end(), by_id);
  return {std::move(labeled), std::move(unlabeled)};
}

std::pair<std::vector<Sample>, std::vector<Sample>> carve_test(const std::vector<Sample>& data,
                                                               double test_fraction, uint64_t seed) {
  const size_t n = data.size();
  const long long k = std::llround(test_fraction * static_cast<double>(n));
  std::vector<size_t> perm(n);
  for (size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(substream(seed, "test-carve"));
  rng.shuffle(perm);
  std::vector<Sample> test, pool;
  for (size_t i = 0; i < n; ++i) {
    (i < static_cast<size_t>(k) ? test : pool).push_back(data[perm[i]]);
  }
  auto by_id = [](const Sample& a, const Sample& b) { return a.id < b.id; };
  std::sort(test.begin(), test.end(), by_id);
  std::sort(pool.begin(), pool.end(), by_id);
  return {std::move(test), std::move(pool)};
}

Sample augment(const Sample& s, Rng& rng, int max_shift_cells) {
  if (!s.gold.has_value()) throw std::invalid_argument("augment: sample has no training target box");
  Sample out = s;
  const int g = s.scene.grid;
  Box box = *out.gold;

  if (rng.bernoulli(0.5)) {
    for (auto& o : out.scene.objects) o.col = g - o.col - o.wcells;
    for (auto& tok : out.query.tokens) {
      if (tok == vocab::kLeft) tok = vocab::kRight;
      else if (tok == vocab::kRight) tok = vocab::kLeft;
      else if (tok == vocab::kLeftmost) tok = vocab::kRightmost;
      else if (tok == vocab::kRightmost) tok = vocab::kLeftmost;
    }
    box.cx = 1.0 - box.cx;
  }

  // Feasible integer shifts keep every object block and the box inside the
  // image; sampling from the range replaces reject-and-resample.
  int lo_x = -max_shift_cells, hi_x = max_shift_cells;
  int lo_y = -max_shift_cells, hi_y = max_shift_cells;
  for (const auto& o : out.scene.objects) {
    lo_x = std::max(lo_x, -o.col);
    hi_x = std::min(hi_x, g - (o.col + o.wcells));
    lo_y = std::max(lo_y, -o.row);
    hi_y = std::min(hi_y, g - (o.row + o.hcells));
  }
  const double eps = 1e-9;
  lo_x = std::max(lo_x, static_cast<int>(std::ceil(-(box.cx - box.w / 2.0) * g - eps)));
  hi_x = std::min(hi_x, static_cast<int>(std::floor((1.0 - (box.cx + box.w / 2.0)) * g + eps)));
  lo_y = std::max(lo_y, static_cast<int>(std::ceil(-(box.cy - box.h / 2.0) * g - eps)));
  hi_y = std::min(hi_y, static_cast<int>(std::floor((1.0 - (box.cy + box.h / 2.0)) * g + eps)));
  const int dx = lo_x > hi_x ? 0 : lo_x + rng.uniform_int(hi_x - lo_x + 1);
  const int dy = lo_y > hi_y ? 0 : lo_y + rng.uniform_int(hi_y - lo_y + 1);

  for (auto& o : out.scene.objects) {
    o.col += dx;
    o.row += dy;
  }
  box.cx += static_cast<double>(dx) / g;
  box.cy += static_cast<double>(dy) / g;
  out.gold = box;
  return out;
}

// ---- serialization ----------------------------------------------------------

namespace {
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

void save_dataset(const std::string& path, const std::vector<Sample>& data, const GenSpec& spec) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_dataset: cannot open " + path);
  f << "# ssvg-dataset v1\n";
  f << "# n=" << data.size() << " grid=" << spec.grid << " seed=" << spec.seed << "\n";
  f << "# vocab=";
  const auto& words = vocab_words();
  for (size_t i = 0; i < words.size(); ++i) f << (i ? "," : "") << words[i];
  f << "\n";
  for (const auto& s : data) {
    f << "id=" << s.id << "|target=" << s.query.target_index << "|objects=";
    for (size_t i = 0; i < s.scene.objects.size(); ++i) {
      const auto& o = s.scene.objects[i];
      if (i) f << ";";
      f << o.shape << "," << o.color << "," << o.row << "," << o.col << "," << o.hcells << ","
        << o.wcells;
    }
    f << "|tokens=";
    for (size_t i = 0; i < s.query.tokens.size(); ++i) f << (i ? "," : "") << s.query.tokens[i];
    if (s.gold) {
      f << "|gold=" << fmt_double(s.gold->cx) << "," << fmt_double(s.gold->cy) << ","
        << fmt_double(s.gold->w) << "," << fmt_double(s.gold->h);
    }
    f << "\n";
  }
  if (!f) throw std::runtime_error("save_dataset: write failed for " + path);
}

namespace {
std::vector<std::string> split_str(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace

LoadedDataset load_dataset(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_dataset: cannot open " + path);
  LoadedDataset out;
  std::string line;
  bool version_ok = false;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.find("ssvg-dataset v1") != std::string::npos) version_ok = true;
      auto gpos = line.find("grid=");
      if (gpos != std::string::npos) out.grid = std::atoi(line.c_str() + gpos + 5);
      auto spos = line.find("seed=");
      if (spos != std::string::npos) out.seed = std::strtoull(line.c_str() + spos + 5, nullptr, 10);
      continue;
    }
    if (!version_ok) throw std::runtime_error("load_dataset: missing ssvg-dataset v1 header");
    Sample s;
    s.scene.grid = out.grid;
    for (const auto& field : split_str(line, '|')) {
      auto eq = field.find('=');
      if (eq == std::string::npos) throw std::runtime_error("load_dataset: malformed field: " + field);
      const std::string key = field.substr(0, eq);
      const std::string val = field.substr(eq + 1);
      if (key == "id") {
        s.id = std::atoi(val.c_str());
      } else if (key == "target") {
        s.query.target_index = std::atoi(val.c_str());
      } else if (key == "objects") {
        for (const auto& rec : split_str(val, ';')) {
          auto nums = split_str(rec, ',');
          if (nums.size() != 6) throw std::runtime_error("load_dataset: malformed object: " + rec);
          SceneObject o;
          o.shape = std::atoi(nums[0].c_str());
          o.color = std::atoi(nums[1].c_str());
          o.row = std::atoi(nums[2].c_str());
          o.col = std::atoi(nums[3].c_str());
          o.hcells = std::atoi(nums[4].c_str());
          o.wcells = std::atoi(nums[5].c_str());
          s.scene.objects.push_back(o);
        }
      } else if (key == "tokens") {
        for (const auto& t : split_str(val, ',')) s.query.tokens.push_back(std::atoi(t.c_str()));
      } else if (key == "gold") {
        auto nums = split_str(val, ',');
        if (nums.size() != 4) throw std::runtime_error("load_dataset: malformed gold box");
        s.gold = Box{std::strtod(nums[0].c_str(), nullptr), std::strtod(nums[1].c_str(), nullptr),
                     std::strtod(nums[2].c_str(), nullptr), std::strtod(nums[3].c_str(), nullptr)};
      }
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

uint64_t file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("file_hash: cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
    const std::streamsize n = f.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<uint8_t>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (f.eof()) break;
  }
  return h;
}

}  // namespace ssvg
