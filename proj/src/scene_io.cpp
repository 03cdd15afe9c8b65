#include "splatweaver/scene_io.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace splat {

namespace {

std::string dir_of(const std::string& path) {
  auto p = std::filesystem::path(path).parent_path();
  return p.empty() ? std::string(".") : p.string();
}

std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw ParseError("cannot open " + path + " for writing");
  return os;
}

std::ifstream open_in(const std::string& path, bool binary) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw ParseError("cannot open " + path);
  return is;
}

}  // namespace

// ---------------------------------------------------------------------------
// PPM / PFM

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.shape.size() != 3 || image.shape[2] != 3)
    throw ShapeError("write_ppm: expected [H,W,3], got " + shape_str(image.shape));
  int h = image.shape[0], w = image.shape[1];
  auto os = open_out(path, true);
  os << "P6\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w * 3; ++x) {
      real v = image.ptr()[int64_t(y) * w * 3 + x];
      v = std::min(real(1), std::max(real(0), v));
      row[size_t(x)] = uint8_t(std::lround(double(v) * 255.0));
    }
    os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
  if (!os) throw ParseError("write_ppm: write failed for " + path);
}

Tensor read_ppm(const std::string& path) {
  auto is = open_in(path, true);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw ParseError("read_ppm: " + path + " is not binary PPM");
  int w, h, maxv;
  is >> w >> h >> maxv;
  if (!is || w <= 0 || h <= 0 || maxv != 255)
    throw ParseError("read_ppm: bad header in " + path);
  is.get();  // single whitespace after header
  std::vector<uint8_t> buf(size_t(h) * w * 3);
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (!is) throw ParseError("read_ppm: truncated pixel data in " + path);
  std::vector<real> vals(buf.size());
  for (size_t i = 0; i < buf.size(); ++i) vals[i] = real(buf[i]) / real(255);
  return constant({h, w, 3}, std::move(vals));
}

void write_gray_ppm(const std::string& path, const Tensor& field) {
  if (field.shape.size() != 2)
    throw ShapeError("write_gray_ppm: expected [H,W], got " + shape_str(field.shape));
  real mx = 0;
  for (int64_t i = 0; i < field.numel(); ++i)
    mx = std::max(mx, field.ptr()[i]);
  int h = field.shape[0], w = field.shape[1];
  std::vector<real> rgb(size_t(h) * w * 3);
  for (int64_t i = 0; i < int64_t(h) * w; ++i) {
    real v = mx > 0 ? field.ptr()[i] / mx : 0;
    rgb[size_t(3 * i)] = rgb[size_t(3 * i + 1)] = rgb[size_t(3 * i + 2)] = v;
  }
  write_ppm(path, constant({h, w, 3}, std::move(rgb)));
}

void write_indexed_ppm(const std::string& path, const std::vector<int>& values,
                       int height, int width,
                       const std::vector<std::array<uint8_t, 3>>& palette) {
  if (int64_t(values.size()) != int64_t(height) * width)
    throw ShapeError("write_indexed_ppm: value count does not match size");
  std::vector<real> rgb(values.size() * 3);
  for (size_t i = 0; i < values.size(); ++i) {
    int v = values[i];
    if (v < 0 || v >= int(palette.size()))
      throw ContractError(strformat("write_indexed_ppm: value %d outside palette", v));
    for (int k = 0; k < 3; ++k)
      rgb[3 * i + size_t(k)] = real(palette[size_t(v)][size_t(k)]) / real(255);
  }
  write_ppm(path, constant({height, width, 3}, std::move(rgb)));
}

void write_pfm(const std::string& path, const Tensor& field) {
  if (field.shape.size() != 2)
    throw ShapeError("write_pfm: expected [H,W], got " + shape_str(field.shape));
  int h = field.shape[0], w = field.shape[1];
  auto os = open_out(path, true);
  os << "Pf\n" << w << " " << h << "\n-1.0\n";
  // PFM stores rows bottom-up
  std::vector<float> row(static_cast<size_t>(w));
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) row[size_t(x)] = float(field.ptr()[int64_t(y) * w + x]);
    os.write(reinterpret_cast<const char*>(row.data()),
             std::streamsize(row.size() * sizeof(float)));
  }
  if (!os) throw ParseError("write_pfm: write failed for " + path);
}

Tensor read_pfm(const std::string& path) {
  auto is = open_in(path, true);
  std::string magic;
  is >> magic;
  if (magic != "Pf") throw ParseError("read_pfm: " + path + " is not grayscale PFM");
  int w, h;
  double scale;
  is >> w >> h >> scale;
  if (!is || w <= 0 || h <= 0) throw ParseError("read_pfm: bad header in " + path);
  if (scale >= 0) throw ParseError("read_pfm: big-endian PFM unsupported: " + path);
  is.get();
  std::vector<float> buf(size_t(h) * w);
  is.read(reinterpret_cast<char*>(buf.data()),
          std::streamsize(buf.size() * sizeof(float)));
  if (!is) throw ParseError("read_pfm: truncated data in " + path);
  std::vector<real> vals(size_t(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      vals[size_t(y) * w + x] = real(buf[size_t(h - 1 - y) * w + x]);
  return constant({h, w}, std::move(vals));
}

// ---------------------------------------------------------------------------
// Scene container

namespace {

void write_view(std::ostream& os, const View& v, const std::string& kind,
                const std::string& image_rel, const std::string& depth_rel) {
  const Camera& c = v.cam;
  os << "view " << kind << "\n";
  os << "image " << image_rel << "\n";
  os << "depth " << (depth_rel.empty() ? "none" : depth_rel) << "\n";
  os << "size " << c.width << " " << c.height << "\n";
  os << strformat("intrinsics %.17g %.17g %.17g %.17g\n", double(c.fx),
                  double(c.fy), double(c.cx), double(c.cy));
  os << strformat("clip %.17g %.17g\n", double(c.near_clip), double(c.far_clip));
  for (int r = 0; r < 3; ++r)
    os << strformat("rot %.17g %.17g %.17g\n", double(c.rot[size_t(3 * r)]),
                    double(c.rot[size_t(3 * r + 1)]), double(c.rot[size_t(3 * r + 2)]));
  os << strformat("trans %.17g %.17g %.17g\n", double(c.trans[0]),
                  double(c.trans[1]), double(c.trans[2]));
  os << "end\n";
}

}  // namespace

void save_scene(const std::string& path, const SceneBatch& batch) {
  std::string dir = dir_of(path);
  auto os = open_out(path, false);
  os << "splatweaver-scene 1\n";
  os << strformat("world_unit %.17g\n", double(batch.world_unit));
  os << "views " << batch.context.size() << " " << batch.target.size() << "\n";
  int idx = 0;
  auto dump = [&](const View& v, const std::string& kind) {
    std::string img = strformat("img_%03d.ppm", idx);
    std::string dep;
    write_ppm(dir + "/" + img, v.image);
    if (v.depth.data && v.depth.numel()) {
      dep = strformat("dep_%03d.pfm", idx);
      write_pfm(dir + "/" + dep, v.depth);
    }
    write_view(os, v, kind, img, dep);
    ++idx;
  };
  for (const View& v : batch.context) dump(v, "context");
  for (const View& v : batch.target) dump(v, "target");
  if (!os) throw ParseError("save_scene: write failed for " + path);
}

SceneBatch load_scene(const std::string& path) {
  std::string dir = dir_of(path);
  auto is = open_in(path, false);
  std::string word;
  int version;
  is >> word >> version;
  if (word != "splatweaver-scene" || version != 1)
    throw ParseError("load_scene: " + path + " is not a scene file");
  SceneBatch batch;
  size_t n_ctx, n_tgt;
  double wu;
  is >> word >> wu;
  if (word != "world_unit") throw ParseError("load_scene: expected world_unit");
  batch.world_unit = real(wu);
  is >> word >> n_ctx >> n_tgt;
  if (word != "views") throw ParseError("load_scene: expected views");
  for (size_t i = 0; i < n_ctx + n_tgt; ++i) {
    std::string kind, image_rel, depth_rel, key;
    is >> word >> kind;
    if (word != "view" || (kind != "context" && kind != "target"))
      throw ParseError("load_scene: malformed view block");
    View v;
    is >> key >> image_rel;
    if (key != "image") throw ParseError("load_scene: expected image");
    is >> key >> depth_rel;
    if (key != "depth") throw ParseError("load_scene: expected depth");
    is >> key >> v.cam.width >> v.cam.height;
    if (key != "size") throw ParseError("load_scene: expected size");
    double fx, fy, cx, cy, nc, fc;
    is >> key >> fx >> fy >> cx >> cy;
    if (key != "intrinsics") throw ParseError("load_scene: expected intrinsics");
    v.cam.fx = real(fx); v.cam.fy = real(fy); v.cam.cx = real(cx); v.cam.cy = real(cy);
    is >> key >> nc >> fc;
    if (key != "clip") throw ParseError("load_scene: expected clip");
    v.cam.near_clip = real(nc); v.cam.far_clip = real(fc);
    for (int r = 0; r < 3; ++r) {
      double a, b, c;
      is >> key >> a >> b >> c;
      if (key != "rot") throw ParseError("load_scene: expected rot");
      v.cam.rot[size_t(3 * r)] = real(a);
      v.cam.rot[size_t(3 * r + 1)] = real(b);
      v.cam.rot[size_t(3 * r + 2)] = real(c);
    }
    double t0, t1, t2;
    is >> key >> t0 >> t1 >> t2;
    if (key != "trans") throw ParseError("load_scene: expected trans");
    v.cam.trans = {real(t0), real(t1), real(t2)};
    is >> key;
    if (key != "end") throw ParseError("load_scene: expected end");
    v.image = read_ppm(dir + "/" + image_rel);
    if (v.image.shape[0] != v.cam.height || v.image.shape[1] != v.cam.width)
      throw ParseError(strformat(
          "load_scene: %s is %dx%d but the camera declares %dx%d",
          image_rel.c_str(), v.image.shape[1], v.image.shape[0], v.cam.width,
          v.cam.height));
    if (depth_rel != "none") {
      v.depth = read_pfm(dir + "/" + depth_rel);
      if (v.depth.shape[0] != v.cam.height || v.depth.shape[1] != v.cam.width)
        throw ParseError("load_scene: depth size mismatch for " + depth_rel);
    }
    (kind == "context" ? batch.context : batch.target).push_back(std::move(v));
  }
  batch.validate();
  return batch;
}

// ---------------------------------------------------------------------------
// Gaussian cloud

void save_cloud(const std::string& path, const std::vector<CloudEntry>& entries,
                int sh_degree) {
  int cdim = 3 * (sh_degree + 1) * (sh_degree + 1);
  auto os = open_out(path, true);
  os << "swcloud 1\n";
  os << "count " << entries.size() << "\n";
  os << "sh_degree " << sh_degree << "\n";
  os << "fields mu:3f32 s:3f32 q:4f32 alpha:f32 c:" << cdim
     << "f32 expert:u8 source:3u32\n";
  os << "data\n";
  auto put_f = [&](real v) {
    float f = float(v);
    os.write(reinterpret_cast<const char*>(&f), 4);
  };
  for (const CloudEntry& e : entries) {
    for (real v : e.prim.mu) put_f(v);
    for (real v : e.prim.s) put_f(v);
    for (real v : e.prim.q) put_f(v);
    put_f(e.prim.alpha);
    for (int k = 0; k < cdim; ++k)
      put_f(k < int(e.prim.c.size()) ? e.prim.c[size_t(k)] : real(0));
    os.write(reinterpret_cast<const char*>(&e.expert), 1);
    uint32_t src[3] = {e.view, e.row, e.col};
    os.write(reinterpret_cast<const char*>(src), 12);
  }
  if (!os) throw ParseError("save_cloud: write failed for " + path);
}

std::vector<CloudEntry> load_cloud(const std::string& path, int* sh_degree_out) {
  auto is = open_in(path, true);
  std::string word;
  int version;
  is >> word >> version;
  if (word != "swcloud" || version != 1)
    throw ParseError("load_cloud: " + path + " is not a cloud file");
  size_t count;
  int sh_degree;
  is >> word >> count;
  if (word != "count") throw ParseError("load_cloud: expected count");
  is >> word >> sh_degree;
  if (word != "sh_degree") throw ParseError("load_cloud: expected sh_degree");
  std::string fields_line;
  is >> word;
  if (word != "fields") throw ParseError("load_cloud: expected fields");
  std::getline(is, fields_line);
  is >> word;
  if (word != "data") throw ParseError("load_cloud: expected data");
  is.get();
  int cdim = 3 * (sh_degree + 1) * (sh_degree + 1);
  auto get_f = [&]() {
    float f;
    is.read(reinterpret_cast<char*>(&f), 4);
    return real(f);
  };
  std::vector<CloudEntry> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    CloudEntry e;
    for (auto& v : e.prim.mu) v = get_f();
    for (auto& v : e.prim.s) v = get_f();
    for (auto& v : e.prim.q) v = get_f();
    e.prim.alpha = get_f();
    e.prim.c.resize(size_t(cdim));
    for (auto& v : e.prim.c) v = get_f();
    is.read(reinterpret_cast<char*>(&e.expert), 1);
    uint32_t src[3];
    is.read(reinterpret_cast<char*>(src), 12);
    e.view = src[0];
    e.row = src[1];
    e.col = src[2];
    if (!is) throw ParseError("load_cloud: truncated records in " + path);
    real qn = std::sqrt(e.prim.q[0] * e.prim.q[0] + e.prim.q[1] * e.prim.q[1] +
                        e.prim.q[2] * e.prim.q[2] + e.prim.q[3] * e.prim.q[3]);
    if (std::fabs(qn - real(1)) > real(1e-3))
      throw ParseError(strformat("load_cloud: record %zu quaternion norm %g", i,
                                 double(qn)));
  }
  if (sh_degree_out) *sh_degree_out = sh_degree;
  return out;
}

// ---------------------------------------------------------------------------
// Config

namespace {

struct KeyIO {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

int64_t parse_int(const std::string& v) {
  size_t pos = 0;
  int64_t out = std::stoll(v, &pos);
  if (pos != v.size()) throw ParseError("not an integer: " + v);
  return out;
}

real parse_real(const std::string& v) {
  size_t pos = 0;
  double out = std::stod(v, &pos);
  if (pos != v.size()) throw ParseError("not a number: " + v);
  return real(out);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ParseError("not a boolean: " + v);
}

std::string fmt_real(real v) { return strformat("%.17g", double(v)); }
std::string fmt_bool(bool v) { return v ? "true" : "false"; }

const std::vector<KeyIO>& key_table() {
  static const std::vector<KeyIO> table = [] {
    std::vector<KeyIO> t;
    auto add_i64 = [&](const char* k, int64_t TrainConfig::*f) {
      t.push_back({k, [f](const TrainConfig& c) { return std::to_string(c.*f); },
                   [f](TrainConfig& c, const std::string& v) { c.*f = parse_int(v); }});
    };
    auto add_int = [&](const char* k, int TrainConfig::*f) {
      t.push_back({k, [f](const TrainConfig& c) { return std::to_string(c.*f); },
                   [f](TrainConfig& c, const std::string& v) { c.*f = int(parse_int(v)); }});
    };
    auto add_real = [&](const char* k, real TrainConfig::*f) {
      t.push_back({k, [f](const TrainConfig& c) { return fmt_real(c.*f); },
                   [f](TrainConfig& c, const std::string& v) { c.*f = parse_real(v); }});
    };
    auto add_bool = [&](const char* k, bool TrainConfig::*f) {
      t.push_back({k, [f](const TrainConfig& c) { return fmt_bool(c.*f); },
                   [f](TrainConfig& c, const std::string& v) { c.*f = parse_bool(v); }});
    };
    add_i64("steps", &TrainConfig::steps);
    add_real("lr_init", &TrainConfig::lr_init);
    add_real("lr_final", &TrainConfig::lr_final);
    add_real("lambda_percep", &TrainConfig::lambda_percep);
    add_real("lambda_route", &TrainConfig::lambda_route);
    add_real("lambda_budget", &TrainConfig::lambda_budget);
    add_real("lambda_pose", &TrainConfig::lambda_pose);
    add_real("lambda_depth", &TrainConfig::lambda_depth);
    add_real("epsilon_s", &TrainConfig::eps_s);
    add_real("epsilon_b", &TrainConfig::eps_b);
    add_int("max_cardinality", &TrainConfig::max_cardinality);
    add_int("knn_k", &TrainConfig::knn_k);
    add_int("feat_dim", &TrainConfig::feat_dim);
    add_int("latent_dim", &TrainConfig::latent_dim);
    add_int("pixel_feat_dim", &TrainConfig::pixel_feat_dim);
    add_int("attn_dim", &TrainConfig::attn_dim);
    add_real("temp_init", &TrainConfig::temp_init);
    add_real("temp_final", &TrainConfig::temp_final);
    t.push_back({"seed",
                 [](const TrainConfig& c) { return std::to_string(c.seed); },
                 [](TrainConfig& c, const std::string& v) {
                   c.seed = uint64_t(parse_int(v));
                 }});
    add_i64("log_interval", &TrainConfig::log_interval);
    add_i64("checkpoint_interval", &TrainConfig::checkpoint_interval);
    add_bool("supervise_targets", &TrainConfig::supervise_targets);
    add_bool("use_depth_loss", &TrainConfig::use_depth_loss);
    add_bool("use_perceptual", &TrainConfig::use_perceptual);
    add_bool("eval_noise", &TrainConfig::eval_noise);
    add_bool("shared_band_branches", &TrainConfig::shared_band_branches);
    add_bool("scalar_attention", &TrainConfig::scalar_attention);
    add_int("sh_degree", &TrainConfig::sh_degree);
    add_real("scene_extent", &TrainConfig::scene_extent);
    add_real("depth_init", &TrainConfig::depth_init);
    return t;
  }();
  return table;
}

}  // namespace

std::string config_to_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& kv : key_table()) out += kv.key + "=" + kv.get(cfg) + "\n";
  for (size_t i = 0; i < cfg.rho.size(); ++i)
    out += strformat("rho%zu=%s\n", i + 1, fmt_real(cfg.rho[i]).c_str());
  return out;
}

TrainConfig config_from_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  std::vector<std::pair<int, real>> rho_overrides;
  while (std::getline(is, line)) {
    ++lineno;
    std::string s = line;
    auto hash = s.find('#');
    if (hash != std::string::npos) s = s.substr(0, hash);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
      s.pop_back();
    size_t start = s.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    s = s.substr(start);
    auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ParseError(strformat("config line %d: expected key=value, got '%s'",
                                 lineno, line.c_str()));
    std::string key = s.substr(0, eq);
    std::string val = s.substr(eq + 1);
    while (!key.empty() && key.back() == ' ') key.pop_back();
    size_t vs = val.find_first_not_of(" \t");
    val = vs == std::string::npos ? "" : val.substr(vs);
    if (val.empty())
      throw ParseError(strformat("config line %d: missing value for '%s'", lineno,
                                 key.c_str()));
    if (key.rfind("rho", 0) == 0 && key.size() > 3 &&
        key.find_first_not_of("0123456789", 3) == std::string::npos) {
      int idx = int(parse_int(key.substr(3)));
      if (idx < 1)
        throw ParseError(strformat("config line %d: bad fraction key '%s'", lineno,
                                   key.c_str()));
      try {
        rho_overrides.emplace_back(idx, parse_real(val));
      } catch (const ParseError& e) {
        throw ParseError(strformat("config line %d: %s", lineno, e.what()));
      }
      continue;
    }
    bool found = false;
    for (const auto& kv : key_table()) {
      if (kv.key == key) {
        try {
          kv.set(cfg, val);
        } catch (const ParseError& e) {
          throw ParseError(strformat("config line %d: %s", lineno, e.what()));
        }
        found = true;
        break;
      }
    }
    if (!found)
      throw ParseError(strformat("config line %d: unknown key '%s'", lineno,
                                 key.c_str()));
  }
  if (!rho_overrides.empty()) {
    int max_idx = cfg.max_cardinality;
    for (auto& [idx, v] : rho_overrides) max_idx = std::max(max_idx, idx);
    std::vector<real> rho(size_t(cfg.max_cardinality), real(0));
    if (int(cfg.rho.size()) == cfg.max_cardinality) rho = cfg.rho;
    rho.resize(size_t(std::max(cfg.max_cardinality, max_idx)), real(0));
    for (auto& [idx, v] : rho_overrides) rho[size_t(idx - 1)] = v;
    rho.resize(size_t(cfg.max_cardinality), real(0));
    cfg.rho = rho;
  }
  if (int(cfg.rho.size()) != cfg.max_cardinality)
    cfg.rho.resize(size_t(cfg.max_cardinality), real(0));
  cfg.validate();
  return cfg;
}

TrainConfig config_load(const std::string& path) {
  auto is = open_in(path, false);
  std::stringstream ss;
  ss << is.rdbuf();
  return config_from_text(ss.str());
}

}  // namespace splat
