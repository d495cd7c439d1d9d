#include "ssvg/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssvg {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& k, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') throw std::invalid_argument("config: bad number for " + k);
  return x;
}

int to_int(const std::string& k, const std::string& v) {
  const double x = to_double(k, v);
  return static_cast<int>(x);
}

bool to_bool(const std::string& k, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad bool for " + k);
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config: expected key = value: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));

    if (key == "split.label_fraction") c.label_fraction = to_double(key, val);
    else if (key == "split.test_fraction") c.test_fraction = to_double(key, val);
    else if (key == "model.grid") c.model.grid = to_int(key, val);
    else if (key == "model.t_max") c.model.t_max = to_int(key, val);
    else if (key == "model.d_model") c.model.d_model = to_int(key, val);
    else if (key == "model.n_heads") c.model.n_heads = to_int(key, val);
    else if (key == "model.n_layers") c.model.n_layers = to_int(key, val);
    else if (key == "model.d_ff") c.model.d_ff = to_int(key, val);
    else if (key == "model.bins") c.model.bins = to_int(key, val);
    else if (key == "train.n1") c.n1 = to_int(key, val);
    else if (key == "train.n2") c.n2 = to_int(key, val);
    else if (key == "train.k") c.k = to_int(key, val);
    else if (key == "train.batch_size") c.batch_size = to_int(key, val);
    else if (key == "train.labeled_ratio") c.labeled_ratio = to_int(key, val);
    else if (key == "train.lr") c.lr = to_double(key, val);
    else if (key == "train.lr_drop_factor") c.lr_drop_factor = to_double(key, val);
    else if (key == "train.lr_drop_at") c.lr_drop_at = to_double(key, val);
    else if (key == "train.weight_decay") c.weight_decay = to_double(key, val);
    else if (key == "train.n_percent") c.n_percent = to_double(key, val);
    else if (key == "train.augment") c.augment = to_bool(key, val);
    else if (key == "train.augment_shift") c.augment_shift = to_int(key, val);
    else if (key == "loss.l1") c.loss.l1 = to_double(key, val);
    else if (key == "loss.giou") c.loss.giou = to_double(key, val);
    else if (key == "loss.ce") c.loss.ce = to_double(key, val);
    else if (key == "score.confidence_combine") {
      if (val == "product") c.confidence_combine = ConfidenceCombine::kProduct;
      else if (val == "sum") c.confidence_combine = ConfidenceCombine::kSum;
      else throw std::invalid_argument("config: confidence_combine must be product|sum");
    }
    else if (key == "score.relevance_normalize") c.relevance_normalize = to_bool(key, val);
    else if (key == "seed") c.seed = static_cast<uint64_t>(std::strtoull(val.c_str(), nullptr, 10));
    else if (key == "threads") c.threads = to_int(key, val);
    else throw std::invalid_argument("config: unknown key: " + key);
  }
  if (c.n1 < 0 || c.n2 < 0 || c.k < 0) throw std::invalid_argument("config: negative schedule value");
  if (c.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  return c;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_config: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_text(const TrainConfig& c) {
  std::ostringstream o;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  o << "split.label_fraction = " << num(c.label_fraction) << "\n";
  o << "split.test_fraction = " << num(c.test_fraction) << "\n";
  o << "model.grid = " << c.model.grid << "\n";
  o << "model.t_max = " << c.model.t_max << "\n";
  o << "model.d_model = " << c.model.d_model << "\n";
  o << "model.n_heads = " << c.model.n_heads << "\n";
  o << "model.n_layers = " << c.model.n_layers << "\n";
  o << "model.d_ff = " << c.model.d_ff << "\n";
  o << "model.bins = " << c.model.bins << "\n";
  o << "train.n1 = " << c.n1 << "\n";
  o << "train.n2 = " << c.n2 << "\n";
  o << "train.k = " << c.k << "\n";
  o << "train.batch_size = " << c.batch_size << "\n";
  o << "train.labeled_ratio = " << c.labeled_ratio << "\n";
  o << "train.lr = " << num(c.lr) << "\n";
  o << "train.lr_drop_factor = " << num(c.lr_drop_factor) << "\n";
  o << "train.lr_drop_at = " << num(c.lr_drop_at) << "\n";
  o << "train.weight_decay = " << num(c.weight_decay) << "\n";
  o << "train.n_percent = " << num(c.n_percent) << "\n";
  o << "train.augment = " << (c.augment ? "true" : "false") << "\n";
  o << "train.augment_shift = " << c.augment_shift << "\n";
  o << "loss.l1 = " << num(c.loss.l1) << "\n";
  o << "loss.giou = " << num(c.loss.giou) << "\n";
  o << "loss.ce = " << num(c.loss.ce) << "\n";
  o << "score.confidence_combine = "
    << (c.confidence_combine == ConfidenceCombine::kProduct ? "product" : "sum") << "\n";
  o << "score.relevance_normalize = " << (c.relevance_normalize ? "true" : "false") << "\n";
  o << "seed = " << c.seed << "\n";
  o << "threads = " << c.threads << "\n";
  return o.str();
}

}  // namespace ssvg
