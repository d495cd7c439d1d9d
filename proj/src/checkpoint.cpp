#include "ssvg/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace ssvg {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'V', 'G', 'C', 'K', 'P', '1'};

void write_i32(std::ostream& o, int32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
void write_i64(std::ostream& o, int64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }
void write_doubles(std::ostream& o, const std::vector<double>& v) {
  o.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

int32_t read_i32(std::istream& in) {
  int32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
int64_t read_i64(std::istream& in) {
  int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
void read_doubles(std::istream& in, std::vector<double>& v) {
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params, const OptState* opt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kMagic, 8);
  const ModelConfig& c = params.cfg;
  for (int32_t v : {c.grid, c.feat_dim, c.vocab, c.t_max, c.d_model, c.n_heads, c.n_layers, c.d_ff,
                    c.bins})
    write_i32(f, v);

  int32_t n_tensors = 0;
  for_each_param(params, [&](const std::string&, Partition, const Mat&) { ++n_tensors; });
  write_i32(f, n_tensors);
  for_each_param(params, [&](const std::string& name, Partition pt, const Mat& m) {
    write_i32(f, static_cast<int32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    f.put(static_cast<char>(pt));
    write_i32(f, m.rows);
    write_i32(f, m.cols);
    write_doubles(f, m.a);
  });

  f.put(opt ? 1 : 0);
  if (opt) {
    if (opt->slots.size() != static_cast<size_t>(n_tensors))
      throw std::logic_error("save_checkpoint: optimizer slots out of sync with params");
    for (const auto& s : opt->slots) {
      write_i64(f, s.t);
      write_doubles(f, s.m.a);
      write_doubles(f, s.v.a);
    }
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);

  ModelConfig c;
  c.grid = read_i32(f);
  c.feat_dim = read_i32(f);
  c.vocab = read_i32(f);
  c.t_max = read_i32(f);
  c.d_model = read_i32(f);
  c.n_heads = read_i32(f);
  c.n_layers = read_i32(f);
  c.d_ff = read_i32(f);
  c.bins = read_i32(f);

  LoadedCheckpoint out;
  out.params = init_params(c, 0);  // shapes; every value is overwritten below

  const int32_t n_tensors = read_i32(f);
  int32_t seen = 0;
  for_each_param(out.params, [&](const std::string& name, Partition pt, Mat& m) {
    const int32_t name_len = read_i32(f);
    std::string got(static_cast<size_t>(name_len), '\0');
    f.read(got.data(), name_len);
    if (got != name) throw std::runtime_error("load_checkpoint: tensor order mismatch at " + got);
    const char tag = static_cast<char>(f.get());
    if (tag != static_cast<char>(pt))
      throw std::runtime_error("load_checkpoint: partition tag mismatch at " + name);
    const int32_t rows = read_i32(f);
    const int32_t cols = read_i32(f);
    if (rows != m.rows || cols != m.cols)
      throw std::runtime_error("load_checkpoint: shape mismatch at " + name);
    read_doubles(f, m.a);
    ++seen;
  });
  if (seen != n_tensors) throw std::runtime_error("load_checkpoint: tensor count mismatch");

  const int has_opt = f.get();
  if (has_opt == 1) {
    OptState st = make_opt_state(out.params);
    for (auto& s : st.slots) {
      s.t = read_i64(f);
      read_doubles(f, s.m.a);
      read_doubles(f, s.v.a);
    }
    out.opt = std::move(st);
  }
  if (!f) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return out;
}

}  // namespace ssvg
