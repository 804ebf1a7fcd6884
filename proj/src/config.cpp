#include "karat/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "karat/error.hpp"

namespace karat::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

// Re-throws parse errors from the enum helpers with the key attached.
template <typename F>
auto keyed(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string heads_to_string(const std::vector<attention::HeadActivation>& heads) {
  std::string out;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    if (i) out += ",";
    out += attention::to_string(heads[i]);
  }
  return out;
}

std::vector<attention::HeadActivation> parse_heads(const std::string& key, const std::string& v) {
  std::vector<attention::HeadActivation> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(keyed(key, [&] { return attention::parse_head_activation(item); }));
  }
  return out;
}

std::string projection_grad_name(ProjectionGrad g) {
  return g == ProjectionGrad::StraightThrough ? "straight_through" : "active_set";
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define KARAT_SIZE_KEY(NAME, FIELD)                                                   \
  Key {                                                                               \
    NAME, [](RunConfig& c, const std::string& v) { c.FIELD = to_size(NAME, v); },     \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                    \
  }
#define KARAT_DOUBLE_KEY(NAME, FIELD)                                                 \
  Key {                                                                               \
    NAME, [](RunConfig& c, const std::string& v) { c.FIELD = to_double(NAME, v); },   \
        [](const RunConfig& c) { return train::format_number(c.FIELD); }              \
  }
#define KARAT_BOOL_KEY(NAME, FIELD)                                                   \
  Key {                                                                               \
    NAME, [](RunConfig& c, const std::string& v) { c.FIELD = to_bool(NAME, v); },     \
        [](const RunConfig& c) { return from_bool(c.FIELD); }                         \
  }
#define KARAT_STRING_KEY(NAME, FIELD)                                                 \
  Key {                                                                               \
    NAME, [](RunConfig& c, const std::string& v) { c.FIELD = v; },                    \
        [](const RunConfig& c) { return c.FIELD; }                                    \
  }

const std::vector<Key>& schema() {
  static const std::vector<Key> keys = {
      Key{"model.preset", [](RunConfig& c, const std::string& v) {
            c.model = keyed("model.preset", [&] { return vit::preset(v); });
            c.model_preset = v;
          },
          [](const RunConfig& c) { return c.model_preset; }},
      KARAT_SIZE_KEY("model.image_size", model.image_size),
      KARAT_SIZE_KEY("model.channels", model.channels),
      KARAT_SIZE_KEY("model.patch_size", model.patch_size),
      KARAT_SIZE_KEY("model.embed_dim", model.embed_dim),
      KARAT_SIZE_KEY("model.heads", model.heads),
      KARAT_SIZE_KEY("model.depth", model.depth),
      KARAT_SIZE_KEY("model.classes", model.classes),
      KARAT_SIZE_KEY("model.mlp_ratio", model.mlp_ratio),

      Key{"attention.type",
          [](RunConfig& c, const std::string& v) {
            if (v != "softmax" && v != "karat") {
              throw ConfigError("attention.type: expected softmax or karat, got '" + v + "'");
            }
            c.model.use_karat = v == "karat";
          },
          [](const RunConfig& c) { return std::string(c.model.use_karat ? "karat" : "softmax"); }},
      Key{"attention.basis",
          [](RunConfig& c, const std::string& v) {
            c.model.karat.basis.kind = keyed("attention.basis", [&] { return basis::parse_kind(v); });
          },
          [](const RunConfig& c) { return basis::to_string(c.model.karat.basis.kind); }},
      Key{"attention.grid_size",
          [](RunConfig& c, const std::string& v) { c.model.karat.basis.grid_size = to_int("attention.grid_size", v); },
          [](const RunConfig& c) { return std::to_string(c.model.karat.basis.grid_size); }},
      Key{"attention.rational_m",
          [](RunConfig& c, const std::string& v) { c.model.karat.basis.rational_m = to_int("attention.rational_m", v); },
          [](const RunConfig& c) { return std::to_string(c.model.karat.basis.rational_m); }},
      Key{"attention.rational_n",
          [](RunConfig& c, const std::string& v) { c.model.karat.basis.rational_n = to_int("attention.rational_n", v); },
          [](const RunConfig& c) { return std::to_string(c.model.karat.basis.rational_n); }},
      Key{"attention.base",
          [](RunConfig& c, const std::string& v) {
            c.model.karat.basis.base = keyed("attention.base", [&] { return basis::parse_base_activation(v); });
          },
          [](const RunConfig& c) { return basis::to_string(c.model.karat.basis.base); }},
      KARAT_BOOL_KEY("attention.fourier_dc", model.karat.basis.fourier_dc),
      KARAT_BOOL_KEY("attention.scaled_init", model.karat.basis.scaled_init),
      Key{"attention.rank",
          [](RunConfig& c, const std::string& v) { c.model.karat.rank = to_int("attention.rank", v); },
          [](const RunConfig& c) { return std::to_string(c.model.karat.rank); }},
      Key{"attention.layout",
          [](RunConfig& c, const std::string& v) {
            c.model.karat.layout = keyed("attention.layout", [&] { return attention::parse_layout(v); });
          },
          [](const RunConfig& c) { return attention::to_string(c.model.karat.layout); }},
      Key{"attention.sharing",
          [](RunConfig& c, const std::string& v) {
            c.model.karat.sharing = keyed("attention.sharing", [&] { return attention::parse_sharing(v); });
          },
          [](const RunConfig& c) { return attention::to_string(c.model.karat.sharing); }},
      KARAT_BOOL_KEY("attention.project", model.karat.project_simplex),
      Key{"attention.projection_grad",
          [](RunConfig& c, const std::string& v) {
            if (v == "straight_through") {
              c.model.karat.projection_grad = ProjectionGrad::StraightThrough;
            } else if (v == "active_set") {
              c.model.karat.projection_grad = ProjectionGrad::ActiveSet;
            } else {
              throw ConfigError("attention.projection_grad: expected straight_through or active_set, got '" + v + "'");
            }
          },
          [](const RunConfig& c) { return projection_grad_name(c.model.karat.projection_grad); }},
      KARAT_DOUBLE_KEY("attention.input_scale", model.karat.input_scale),
      Key{"attention.head_assignment",
          [](RunConfig& c, const std::string& v) { c.model.karat.head_assignment = parse_heads("attention.head_assignment", v); },
          [](const RunConfig& c) { return heads_to_string(c.model.karat.head_assignment); }},

      KARAT_STRING_KEY("data.format", train.data.format),
      KARAT_STRING_KEY("data.train_path", train.data.train_path),
      KARAT_STRING_KEY("data.train_labels", train.data.train_labels),
      KARAT_STRING_KEY("data.test_path", train.data.test_path),
      KARAT_STRING_KEY("data.test_labels", train.data.test_labels),
      KARAT_SIZE_KEY("data.train_size", train.data.train_size),
      KARAT_SIZE_KEY("data.test_size", train.data.test_size),
      KARAT_DOUBLE_KEY("data.noise", train.data.noise),

      KARAT_SIZE_KEY("train.batch_size", train.batch_size),
      KARAT_SIZE_KEY("train.epochs", train.epochs),
      KARAT_DOUBLE_KEY("train.base_lr", train.base_lr),
      KARAT_SIZE_KEY("train.warmup_epochs", train.warmup_epochs),
      KARAT_DOUBLE_KEY("train.warmup_lr", train.warmup_lr),
      KARAT_DOUBLE_KEY("train.min_lr", train.min_lr),
      KARAT_DOUBLE_KEY("train.weight_decay", train.weight_decay),
      KARAT_DOUBLE_KEY("train.grad_clip", train.grad_clip),
      Key{"train.seed",
          [](RunConfig& c, const std::string& v) { c.train.seed = to_size("train.seed", v); },
          [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      KARAT_DOUBLE_KEY("train.label_smoothing", train.label_smoothing),
      KARAT_SIZE_KEY("train.eval_every", train.eval_every),
      KARAT_BOOL_KEY("train.hflip", train.hflip),
      KARAT_SIZE_KEY("train.crop_padding", train.crop_padding),
      KARAT_BOOL_KEY("train.save_checkpoints", train.save_checkpoints),

      KARAT_STRING_KEY("eval.checkpoint", eval_checkpoint),
      KARAT_STRING_KEY("transfer.teacher_checkpoint", transfer.teacher_checkpoint),
      KARAT_STRING_KEY("transfer.teacher_config", transfer.teacher_config),

      KARAT_STRING_KEY("analysis.checkpoint", analysis.checkpoint),
      KARAT_SIZE_KEY("analysis.samples", analysis.samples),
      KARAT_STRING_KEY("analysis.layers", analysis.layers),
      KARAT_SIZE_KEY("analysis.bins", analysis.bins),
      KARAT_DOUBLE_KEY("analysis.range", analysis.range),
      KARAT_STRING_KEY("analysis.trajectory", analysis.trajectory),
      KARAT_SIZE_KEY("analysis.resolution", analysis.resolution),
      KARAT_DOUBLE_KEY("analysis.extent", analysis.extent),
      KARAT_BOOL_KEY("analysis.filter_normalize", analysis.filter_normalize),
      KARAT_SIZE_KEY("analysis.eval_samples", analysis.eval_samples),
  };
  return keys;
}

#undef KARAT_SIZE_KEY
#undef KARAT_DOUBLE_KEY
#undef KARAT_BOOL_KEY
#undef KARAT_STRING_KEY

const Key& find_key(const std::string& name) {
  const auto& keys = schema();
  const auto it = std::find_if(keys.begin(), keys.end(), [&](const Key& k) { return k.name == name; });
  if (it == keys.end()) throw ConfigError("unknown config key '" + name + "'");
  return *it;
}

}  // namespace

Entries parse_config_text(const std::string& text, const std::string& source) {
  Entries out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

Entries read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

RunConfig resolve(const Entries& entries) {
  RunConfig cfg;
  for (const auto& [key, value] : entries) find_key(key);
  const auto preset = std::find_if(entries.rbegin(), entries.rend(), [](const auto& e) { return e.first == "model.preset"; });
  if (preset != entries.rend()) find_key("model.preset").set(cfg, preset->second);
  for (const auto& [key, value] : entries) {
    if (key != "model.preset") find_key(key).set(cfg, value);
  }
  cfg.train.data.image_size = cfg.model.image_size;
  cfg.train.data.classes = cfg.model.classes;
  cfg.model.validate();
  return cfg;
}

std::string render(const RunConfig& cfg) {
  std::string out;
  for (const auto& key : schema()) out += key.name + " = " + key.get(cfg) + "\n";
  return out;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& key : schema()) out.push_back(key.name);
  return out;
}

}  // namespace karat::config
