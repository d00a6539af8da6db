#include "ctcloud/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "ctcloud/errors.hpp"

namespace ctcloud {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& want) {
  throw ConfigError("'" + key + "': expected " + want + ", got '" + value + "'");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(v)) out.push_back(to_size(key, item));
  return out;
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(to_double(key, item));
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

template <typename T>
std::string fmt_opt(const std::optional<T>& v) {
  if (!v) return "";
  if constexpr (std::is_same_v<T, bool>) {
    return fmt(*v);
  } else if constexpr (std::is_floating_point_v<T>) {
    return fmt(*v);
  } else {
    return std::to_string(*v);
  }
}

struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

using FieldTable = std::vector<std::pair<std::string, Field>>;

FieldTable build_fields() {
  FieldTable t;
  auto add = [&t](std::string key, Field f) { t.emplace_back(std::move(key), std::move(f)); };
#define CT_SIZE(KEY, MEMBER)                                                              \
  add(KEY, {[](RunConfig& c, const std::string& k, const std::string& v) { c.MEMBER = to_size(k, v); }, \
            [](const RunConfig& c) { return std::to_string(c.MEMBER); }})
#define CT_DOUBLE(KEY, MEMBER)                                                              \
  add(KEY, {[](RunConfig& c, const std::string& k, const std::string& v) { c.MEMBER = to_double(k, v); }, \
            [](const RunConfig& c) { return fmt(c.MEMBER); }})
#define CT_BOOL(KEY, MEMBER)                                                              \
  add(KEY, {[](RunConfig& c, const std::string& k, const std::string& v) { c.MEMBER = to_bool(k, v); }, \
            [](const RunConfig& c) { return fmt(c.MEMBER); }})
#define CT_OPTIONAL(KEY, MEMBER, PARSE)                                                    \
  add(KEY, {[](RunConfig& c, const std::string& k, const std::string& v) {                 \
              if (v.empty()) {                                                             \
                c.MEMBER.reset();                                                          \
              } else {                                                                     \
                c.MEMBER = PARSE(k, v);                                                    \
              }                                                                            \
            },                                                                             \
            [](const RunConfig& c) { return fmt_opt(c.MEMBER); }})

  add("task", {[](RunConfig& c, const std::string&, const std::string& v) { c.task = parse_task(v); },
               [](const RunConfig& c) { return to_string(c.task); }});
  add("seed", {[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); },
               [](const RunConfig& c) { return std::to_string(c.seed); }});
  add("data.manifest", {[](RunConfig& c, const std::string&, const std::string& v) { c.manifest = v; },
                        [](const RunConfig& c) { return c.manifest.string(); }});

  CT_SIZE("synth.n_per_class", synth.n_per_class);
  CT_SIZE("synth.n_points", synth.n_points);
  CT_SIZE("synth.n_train", synth.n_train);
  CT_SIZE("synth.n_test", synth.n_test);
  CT_OPTIONAL("synth.seed", synth.seed, to_u64);

  CT_SIZE("model.n_points", model.n_points);
  CT_SIZE("model.embed_width", model.embed_width);
  add("model.block_widths",
      {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.block_widths = to_sizes(k, v); },
       [](const RunConfig& c) { return fmt_list(c.model.block_widths); }});
  CT_SIZE("model.group_size", model.group_size);
  CT_SIZE("model.d_e", model.d_e);
  CT_SIZE("model.d_a", model.d_a);
  CT_SIZE("model.head_hidden", model.head_hidden);
  CT_DOUBLE("model.dropout", model.dropout);
  CT_SIZE("model.num_classes", model.num_classes);
  CT_SIZE("model.num_categories", model.num_categories);
  CT_SIZE("model.category_width", model.category_width);
  add("model.decoder_widths",
      {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.decoder_widths = to_sizes(k, v); },
       [](const RunConfig& c) { return fmt_list(c.model.decoder_widths); }});
  add("model.variant",
      {[](RunConfig& c, const std::string&, const std::string& v) { c.model.variant = parse_block_variant(v); },
       [](const RunConfig& c) { return to_string(c.model.variant); }});
  add("model.fusion",
      {[](RunConfig& c, const std::string&, const std::string& v) { c.model.fusion = parse_fusion(v); },
       [](const RunConfig& c) { return to_string(c.model.fusion); }});

  CT_DOUBLE("train.lr0", train.lr0);
  CT_DOUBLE("train.momentum", train.momentum);
  CT_DOUBLE("train.min_lr", train.min_lr);
  CT_SIZE("train.epochs", train.epochs);
  CT_SIZE("train.batch_size", train.batch_size);
  CT_SIZE("train.eval_every", train.eval_every);
  add("train.augment", {[](RunConfig& c, const std::string& k, const std::string& v) {
                          if (v != "auto" && v != "classification" && v != "segmentation" && v != "none") {
                            bad_value(k, v, "auto, classification, segmentation or none");
                          }
                          c.augment = v;
                        },
                        [](const RunConfig& c) { return c.augment; }});
  CT_OPTIONAL("train.z_rotation", z_rotation, to_bool);
  CT_OPTIONAL("train.jitter_sigma", jitter_sigma, to_double);
  CT_OPTIONAL("train.jitter_clip", jitter_clip, to_double);
  CT_OPTIONAL("train.aniso_scale", aniso_scale, to_bool);
  CT_OPTIONAL("train.scale_low", scale_low, to_double);
  CT_OPTIONAL("train.scale_high", scale_high, to_double);
  CT_OPTIONAL("train.stop_after", stop_after, to_size);
  add("train.resume", {[](RunConfig& c, const std::string&, const std::string& v) {
                         if (v.empty()) {
                           c.resume.reset();
                         } else {
                           c.resume = v;
                         }
                       },
                       [](const RunConfig& c) { return c.resume ? c.resume->string() : std::string(); }});

  add("eval.checkpoint", {[](RunConfig& c, const std::string&, const std::string& v) { c.eval.checkpoint = v; },
                          [](const RunConfig& c) { return c.eval.checkpoint.string(); }});
  add("eval.split", {[](RunConfig& c, const std::string& k, const std::string& v) {
                       if (v != "test" && v != "train" && v != "all") bad_value(k, v, "test, train or all");
                       c.eval.split = v;
                     },
                     [](const RunConfig& c) { return c.eval.split; }});
  CT_BOOL("eval.multi_scale", eval.multi_scale);
  add("eval.scales",
      {[](RunConfig& c, const std::string& k, const std::string& v) { c.eval.scales = to_doubles(k, v); },
       [](const RunConfig& c) { return fmt_list(c.eval.scales); }});
  CT_BOOL("eval.anisotropic", eval.anisotropic);

  CT_SIZE("gradcheck.seeds", gradcheck.seeds);
  add("gradcheck.filter", {[](RunConfig& c, const std::string&, const std::string& v) { c.gradcheck.filter = v; },
                           [](const RunConfig& c) { return c.gradcheck.filter; }});
#undef CT_SIZE
#undef CT_DOUBLE
#undef CT_BOOL
#undef CT_OPTIONAL
  return t;
}

const FieldTable& fields() {
  static const FieldTable table = build_fields();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [k, f] : fields()) {
    if (k == key) return &f;
  }
  return nullptr;
}

}  // namespace

RunConfig::RunConfig() {
  model.num_classes = 0;
  model.num_categories = 0;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  const std::string preset = augment == "auto" ? to_string(task) : augment;
  if (preset == "classification") {
    t.augment = AugmentConfig::classification();
  } else if (preset == "segmentation") {
    t.augment = AugmentConfig::segmentation();
  } else {
    t.augment = AugmentConfig::none();
  }
  if (z_rotation) t.augment.z_rotation = *z_rotation;
  if (jitter_sigma) t.augment.jitter_sigma = *jitter_sigma;
  if (jitter_clip) t.augment.jitter_clip = *jitter_clip;
  if (aniso_scale) t.augment.aniso_scale = *aniso_scale;
  if (scale_low) t.augment.scale_low = *scale_low;
  if (scale_high) t.augment.scale_high = *scale_high;
  return t;
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& [key, f] : fields()) out += key + " = " + f.get(*this) + "\n";
  return out;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [key, f] : fields()) k.push_back(key);
    return k;
  }();
  return keys;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  f->set(cfg, key, value);
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
    try {
      apply_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& path,
                         const std::vector<std::string>& overrides) {
  RunConfig cfg;
  bool seed_set = false;
  if (const char* env = std::getenv("CTCLOUD_SEED"); env && *env) {
    cfg.seed = to_u64("CTCLOUD_SEED", env);
  }
  const std::uint64_t env_seed = cfg.seed;
  if (path) {
    cfg = load_config(*path, cfg);
    // A seed key in the file wins over the environment.
    std::ifstream in(*path);
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line.substr(0, line.find('='))) == "seed") seed_set = true;
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + o + "'");
    const std::string key = trim(o.substr(0, eq));
    apply_setting(cfg, key, trim(o.substr(eq + 1)));
    seed_set = seed_set || key == "seed";
  }
  if (!seed_set) cfg.seed = env_seed;
  return cfg;
}

NetworkConfig model_config_for(const RunConfig& cfg, const Dataset& ds) {
  NetworkConfig m = cfg.model;
  m.task = ds.task;
  const std::size_t outputs = ds.task == Task::Classification ? ds.class_names.size() : ds.num_parts();
  if (m.num_classes == 0) m.num_classes = outputs;
  if (m.num_classes != outputs) {
    throw ConfigError("model.num_classes = " + std::to_string(m.num_classes) + " but the dataset has " +
                      std::to_string(outputs));
  }
  if (ds.task == Task::Segmentation) {
    if (m.num_categories == 0) m.num_categories = ds.class_names.size();
    if (m.num_categories < ds.class_names.size()) {
      throw ConfigError("model.num_categories is smaller than the dataset's category count");
    }
  } else if (m.num_categories == 0) {
    m.num_categories = 1;
  }
  if (!ds.items.empty() && ds.items.front().size() != m.n_points) {
    throw ConfigError("model.n_points = " + std::to_string(m.n_points) + " but clouds have " +
                      std::to_string(ds.items.front().size()) + " points");
  }
  m.validate();
  return m;
}

}  // namespace ctcloud
