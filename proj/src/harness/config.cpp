#include "qfuse/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "qfuse/errors.hpp"
#include "qfuse/rng.hpp"

namespace qfuse {

const char* to_string(RunMode mode) {
  switch (mode) {
    case RunMode::train:
      return "train";
    case RunMode::eval:
      return "eval";
    case RunMode::ablate:
      return "ablate";
    case RunMode::gradcheck:
      return "gradcheck";
    case RunMode::datagen:
      return "datagen";
  }
  return "?";
}

RunMode run_mode_from_string(const std::string& s) {
  for (auto m : {RunMode::train, RunMode::eval, RunMode::ablate, RunMode::gradcheck, RunMode::datagen}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown run mode '" + s + "' (expected train|eval|ablate|gradcheck|datagen)");
}

std::string to_string(const QuaFaDepth& q) {
  if (q.all) return "all";
  if (q.stages == 0) return "off";
  if (q.stages == 1) return "first_layer";
  return "depth" + std::to_string(q.stages);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty()) {
    throw ConfigError("'" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty() || !std::isfinite(out)) {
    throw ConfigError("'" + key + "': expected a finite number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("'" + key + "': expected true|false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

std::string fmt_double(double d) {
  // Shortest representation that round-trips.
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, p);
}

const char* mixing_to_string(MixingKind k) {
  switch (k) {
    case MixingKind::quaternion:
      return "quaternion";
    case MixingKind::concat:
      return "concat";
    case MixingKind::mlp:
      return "mlp";
  }
  return "?";
}

MixingKind mixing_from_string(const std::string& key, const std::string& v) {
  if (v == "quaternion") return MixingKind::quaternion;
  if (v == "concat") return MixingKind::concat;
  if (v == "mlp") return MixingKind::mlp;
  throw ConfigError("'" + key + "': expected quaternion|concat|mlp, got '" + v + "'");
}

struct Field {
  const char* section;
  const char* name;
  bool semantic;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& key, const std::string&)> set;

  std::string key() const { return std::string(section) + "." + name; }
};

#define QF_SIZE(sec, member, sem)                                                                    \
  Field {                                                                                            \
    sec, #member, sem, [](const RunConfig& c) { return std::to_string(c.member); },                  \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_size(k, v); } \
  }
#define QF_DOUBLE(sec, member)                                                                          \
  Field {                                                                                               \
    sec, #member, true, [](const RunConfig& c) { return fmt_double(c.member); },                        \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_double(k, v); } \
  }
#define QF_BOOL(sec, member)                                                                          \
  Field {                                                                                             \
    sec, #member, true, [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); },   \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_bool(k, v); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"run", "mode", false, [](const RunConfig& c) { return std::string(to_string(c.mode)); },
       [](RunConfig& c, const std::string&, const std::string& v) { c.mode = run_mode_from_string(v); }},
      {"run", "seeds", true, [](const RunConfig& c) { return join(c.seeds); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.seeds.clear();
         for (const auto& s : split_list(v)) c.seeds.push_back(parse_size(k, s));
       }},
      QF_SIZE("run", steps, true),
      QF_SIZE("run", train_scenes, true),
      QF_SIZE("run", eval_scenes, true),
      QF_BOOL("run", lidar_present),
      QF_SIZE("run", log_every, true),
      QF_SIZE("run", loss_window, true),
      {"run", "out", false, [](const RunConfig& c) { return c.out; },
       [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; }},
      QF_SIZE("run", threads, false),
      {"run", "checkpoint", false, [](const RunConfig& c) { return c.checkpoint; },
       [](RunConfig& c, const std::string&, const std::string& v) { c.checkpoint = v; }},

      {"fusion", "fusion_mode", true, [](const RunConfig& c) { return std::string(to_string(c.fusion_mode)); },
       [](RunConfig& c, const std::string&, const std::string& v) { c.fusion_mode = fusion_mode_from_string(v); }},
      QF_BOOL("fusion", dae),
      QF_BOOL("fusion", gae_enc),
      QF_BOOL("fusion", gae_dec),
      {"fusion", "qua_fa", true, [](const RunConfig& c) { return to_string(c.qua_fa); },
       [](RunConfig& c, const std::string&, const std::string& v) { c.qua_fa = qua_fa_from_string(v); }},
      {"fusion", "fallback_mixing", true,
       [](const RunConfig& c) { return std::string(mixing_to_string(c.fallback_mixing)); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.fallback_mixing = mixing_from_string(k, v); }},
      {"fusion", "axis", true, [](const RunConfig& c) { return std::string(to_string(c.axis)); },
       [](RunConfig& c, const std::string&, const std::string& v) { c.axis = axis_from_string(v); }},
      QF_SIZE("fusion", dae_hidden, true),
      QF_SIZE("fusion", gae_hidden, true),
      QF_BOOL("fusion", gae_quaternion),
      QF_DOUBLE("fusion", supra_gain),

      QF_SIZE("model", image_h, true),
      QF_SIZE("model", image_w, true),
      {"model", "backbone", true, [](const RunConfig& c) { return join(c.backbone); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.backbone.clear();
         for (const auto& s : split_list(v)) c.backbone.push_back(parse_size(k, s));
       }},
      QF_SIZE("model", query_channels, true),
      QF_SIZE("model", grid, true),
      QF_DOUBLE("model", bev_range),
      QF_SIZE("model", encoder_layers, true),
      QF_SIZE("model", decoder_layers, true),
      QF_BOOL("model", depth_aux),

      QF_SIZE("data", cameras, true),
      QF_SIZE("data", boxes_min, true),
      QF_SIZE("data", boxes_max, true),
      QF_DOUBLE("data", camera_hfov),
      QF_DOUBLE("data", camera_height),
      QF_SIZE("data", lidar_azimuth, true),
      QF_SIZE("data", lidar_elevation, true),
      QF_DOUBLE("data", lidar_dropout),

      QF_DOUBLE("optim", lr),
      QF_DOUBLE("optim", momentum),
      QF_DOUBLE("optim", clip),

      QF_DOUBLE("eval", match_radius),
      QF_DOUBLE("eval", peak_threshold),
  };
  return table;
}

#undef QF_SIZE
#undef QF_DOUBLE
#undef QF_BOOL

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

const Field& find_field(const std::string& key) {
  const auto dot = key.find('.');
  const Field* hit = nullptr;
  for (const auto& f : fields()) {
    const bool match = dot == std::string::npos ? key == f.name : key == f.key();
    if (match) {
      hit = &f;
      break;
    }
  }
  if (hit) return *hit;
  const std::string bare = dot == std::string::npos ? key : key.substr(dot + 1);
  const Field* best = nullptr;
  std::size_t best_d = 0;
  for (const auto& f : fields()) {
    const std::size_t d = std::min(edit_distance(key, f.key()), edit_distance(bare, f.name));
    if (!best || d < best_d) {
      best = &f;
      best_d = d;
    }
  }
  throw ConfigError("unknown config key '" + key + "' (nearest valid key: '" + best->key() + "')");
}

}  // namespace

QuaFaDepth qua_fa_from_string(const std::string& s) {
  if (s == "off") return {0, false};
  if (s == "first_layer") return {1, false};
  if (s == "all") return {0, true};
  const std::string digits = s.rfind("depth", 0) == 0 ? s.substr(5) : s;
  try {
    return {parse_size("fusion.qua_fa", digits), false};
  } catch (const ConfigError&) {
    throw ConfigError("'fusion.qua_fa': expected off|first_layer|depth<k>|all, got '" + s + "'");
  }
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Field& f = find_field(trim(key));
  f.set(cfg, f.key(), trim(value));
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) { return find_field(trim(key)).get(cfg); }

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key());
  return out;
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      const bool known = std::any_of(fields().begin(), fields().end(),
                                     [&](const Field& f) { return section == f.section; });
      if (!known) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
    try {
      set_config_value(cfg, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

RunConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, ss.str(), path.string());
  return cfg;
}

std::string config_to_text(const RunConfig& cfg) {
  std::vector<std::string> lines;
  for (const auto& f : fields()) lines.push_back(f.key() + " = " + f.get(cfg));
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::string config_hash(const RunConfig& cfg) {
  std::vector<std::string> lines;
  for (const auto& f : fields()) {
    if (f.semantic) lines.push_back(f.key() + "=" + f.get(cfg));
  }
  std::sort(lines.begin(), lines.end());
  std::uint64_t h = fnv1a64("");
  for (const auto& l : lines) h = fnv1a64(l + "\n", h);
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void validate(const RunConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (cfg.seeds.empty()) fail("run.seeds: at least one seed required");
  if (cfg.train_scenes == 0) fail("run.train_scenes must be positive");
  if (cfg.eval_scenes == 0) fail("run.eval_scenes must be positive");
  if (cfg.log_every == 0) fail("run.log_every must be positive");
  if (cfg.loss_window == 0) fail("run.loss_window must be positive");
  if (cfg.dae_hidden == 0 || cfg.gae_hidden == 0) fail("fusion: hidden widths must be positive");
  if (cfg.backbone.empty() || std::find(cfg.backbone.begin(), cfg.backbone.end(), 0u) != cfg.backbone.end()) {
    fail("model.backbone: need one or more positive stage widths");
  }
  std::size_t h = cfg.image_h, w = cfg.image_w;
  for (std::size_t s = 0; s < cfg.backbone.size(); ++s) {
    if (h < 3 || w < 3) fail("model.image_h/image_w too small for " + std::to_string(cfg.backbone.size()) + " stages");
    h = (h - 1) / 2 + 1;
    w = (w - 1) / 2 + 1;
  }
  if (cfg.query_channels == 0) fail("model.query_channels must be positive");
  if (cfg.grid < 3) fail("model.grid must be at least 3");
  if (!(cfg.bev_range > 0.0)) fail("model.bev_range must be positive");
  if (cfg.encoder_layers == 0) fail("model.encoder_layers must be positive");
  if (cfg.cameras < 1 || cfg.cameras > 2) fail("data.cameras must be 1 or 2");
  if (cfg.boxes_min > cfg.boxes_max) fail("data.boxes_min exceeds data.boxes_max");
  if (!(cfg.camera_hfov > 0.0 && cfg.camera_hfov < 180.0)) fail("data.camera_hfov must be in (0, 180)");
  if (!(cfg.camera_height > 0.0)) fail("data.camera_height must be positive");
  if (cfg.lidar_azimuth == 0 || cfg.lidar_elevation == 0) fail("data: LiDAR ray counts must be positive");
  if (!(cfg.lidar_dropout >= 0.0 && cfg.lidar_dropout < 1.0)) fail("data.lidar_dropout must be in [0, 1)");
  if (!(cfg.lr > 0.0)) fail("optim.lr must be positive");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) fail("optim.momentum must be in [0, 1)");
  if (!(cfg.clip > 0.0)) fail("optim.clip must be positive");
  if (!(cfg.match_radius > 0.0)) fail("eval.match_radius must be positive");
  if (!(cfg.peak_threshold >= 0.0 && cfg.peak_threshold < 1.0)) fail("eval.peak_threshold must be in [0, 1)");
}

DetectorConfig detector_config(const RunConfig& cfg) {
  DetectorConfig dc;
  dc.image_h = cfg.image_h;
  dc.image_w = cfg.image_w;
  dc.backbone_channels = cfg.backbone;
  dc.query_channels = cfg.query_channels;
  dc.encoder_layers = cfg.encoder_layers;
  dc.decoder_layers = cfg.decoder_layers;
  const double cell = 2.0 * cfg.bev_range / static_cast<double>(cfg.grid);
  dc.bev = VoxelSpec{{-cfg.bev_range, cfg.bev_range}, {-cfg.bev_range, cfg.bev_range}, {-1.0, 4.0}, cell, cell, 5.0};
  dc.depth_aux = cfg.depth_aux;

  ChainConfig& cc = dc.chain;
  cc.mode = cfg.fusion_mode;
  cc.dae = cfg.dae;
  cc.gae_enc = cfg.gae_enc;
  cc.gae_dec = cfg.gae_dec;
  cc.dae_hidden = cfg.dae_hidden;
  cc.gae_hidden = cfg.gae_hidden;
  cc.qua_fa_stages.assign(cfg.backbone.size(), false);
  for (std::size_t s = 0; s < cfg.backbone.size(); ++s) cc.qua_fa_stages[s] = cfg.qua_fa.all || s < cfg.qua_fa.stages;
  cc.fallback_mixing = cfg.fallback_mixing;
  cc.axis = cfg.axis;
  cc.gae_quaternion = cfg.gae_quaternion;
  cc.supra.gain = cfg.supra_gain;
  return dc;
}

std::vector<CameraModel> camera_rig(const RunConfig& cfg) {
  constexpr double kSideYaw = 0.5235987755982988;  // 30 degrees
  if (cfg.cameras == 1) {
    return {CameraModel::forward_facing(cfg.image_w, cfg.image_h, cfg.camera_hfov, cfg.camera_height)};
  }
  return {CameraModel::forward_facing(cfg.image_w, cfg.image_h, cfg.camera_hfov, cfg.camera_height, kSideYaw),
          CameraModel::forward_facing(cfg.image_w, cfg.image_h, cfg.camera_hfov, cfg.camera_height, -kSideYaw)};
}

}  // namespace qfuse
