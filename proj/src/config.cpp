#include "cine/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "cine/hash.hpp"

namespace cine {

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("train.learning_rate", "must be > 0");
  if (epochs < 1) throw ConfigError("train.epochs", "must be >= 1");
  if (max_steps < 0) throw ConfigError("train.max_steps", "must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (weight_decay < 0) throw ConfigError("train.weight_decay", "must be >= 0");
  if (!(plateau.factor > 0 && plateau.factor < 1)) throw ConfigError("train.plateau.factor", "must lie in (0, 1)");
  if (plateau.patience < 0) throw ConfigError("train.plateau.patience", "must be >= 0");
  if (plateau.min_lr < 0) throw ConfigError("train.plateau.min_lr", "must be >= 0");
  if (val_every < 1) throw ConfigError("train.val_every", "must be >= 1");
}

namespace {

// Re-raises module validation failures as ConfigError tagged with the section.
template <typename F>
void checked(const char* section, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    std::string key = section;
    const auto colon = msg.find(' ');
    const std::string first = msg.substr(0, colon);
    if (first.rfind(std::string(section) + ".", 0) == 0) key = first;
    throw ConfigError(key, msg);
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (!(data.acceleration >= 1)) throw ConfigError("data.acceleration", "must be >= 1");
  if (data.height < 0) throw ConfigError("data.height", "must be >= 0");
  if (data.width < 0) throw ConfigError("data.width", "must be >= 0");
  if (data.center_lines < 0) throw ConfigError("data.center_lines", "must be >= 0");
  if (data.noise_sigma < 0) throw ConfigError("data.noise_sigma", "must be >= 0");
  checked("knet", [&] { net.knet.validate(); });
  checked("mgda", [&] { net.mgda.validate(); });
  checked("mrf", [&] { net.mrf.validate(); });
  train.validate();
}

namespace {

YAML::Node to_node(const ExperimentConfig& c) {
  YAML::Node n;
  auto& d = c.data;
  n["data"]["manifest"] = d.manifest;
  n["data"]["root"] = d.root;
  n["data"]["height"] = d.height;
  n["data"]["width"] = d.width;
  n["data"]["acceleration"] = d.acceleration;
  n["data"]["center_lines"] = d.center_lines;
  n["data"]["split_seed"] = d.split_seed;
  n["data"]["mask_seed"] = d.mask_seed;
  n["data"]["phase_seed"] = d.phase_seed;
  n["data"]["noise_sigma"] = d.noise_sigma;
  n["data"]["per_frame_masks"] = d.per_frame_masks;

  auto& k = c.net.knet;
  n["knet"]["depth"] = k.depth;
  n["knet"]["base_channels"] = k.base_channels;
  n["knet"]["data_consistency"] = k.use_data_consistency;

  auto& g = c.net.mgda;
  n["mgda"]["enabled"] = g.enabled;
  n["mgda"]["channels"] = g.channels;
  n["mgda"]["extractor_blocks"] = g.extractor_blocks;
  n["mgda"]["pyramid_levels"] = g.pyramid_levels;
  n["mgda"]["flow_channels"] = g.flow_channels;
  n["mgda"]["flow_kernel"] = g.flow_kernel;
  n["mgda"]["propagation"] = to_string(g.mode);
  n["mgda"]["offset_groups"] = g.offset_groups;
  n["mgda"]["offset_clamp_fraction"] = g.offset_clamp_fraction;
  n["mgda"]["backbone_blocks"] = g.backbone_blocks;

  auto& m = c.net.mrf;
  n["mrf"]["enabled"] = m.enabled;
  n["mrf"]["stages"] = m.stages;
  n["mrf"]["channels"] = m.channels;
  n["mrf"]["window"] = m.window;
  n["mrf"]["heads"] = std::vector<int>(m.heads.begin(), m.heads.end());
  n["mrf"]["heads"].SetStyle(YAML::EmitterStyle::Flow);
  n["mrf"]["block_type"] = to_string(m.variant);
  n["mrf"]["blocks_per_stage"] = m.blocks_per_stage;
  n["mrf"]["mlp_ratio"] = m.mlp_ratio;

  auto& t = c.train;
  n["train"]["learning_rate"] = t.learning_rate;
  n["train"]["epochs"] = t.epochs;
  n["train"]["max_steps"] = t.max_steps;
  n["train"]["batch_size"] = t.batch_size;
  n["train"]["weight_decay"] = t.weight_decay;
  n["train"]["plateau"]["factor"] = t.plateau.factor;
  n["train"]["plateau"]["patience"] = t.plateau.patience;
  n["train"]["plateau"]["min_lr"] = t.plateau.min_lr;
  n["train"]["mixed_precision"] = t.mixed_precision;
  n["train"]["seed"] = t.seed;
  n["train"]["val_every"] = t.val_every;
  return n;
}

class Reader {
 public:
  explicit Reader(const YAML::Node& root) : root_(root) {}

  template <typename T>
  void get(const std::string& section, const std::string& key, T& out) {
    const std::string path = section + "." + key;
    seen_.insert(path);
    YAML::Node node = lookup(path);
    if (!node) return;
    try {
      out = node.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(path, "has the wrong type");
    }
  }

  void check_unknown() const {
    if (!root_.IsMap()) throw ConfigError("<root>", "expected a mapping of sections");
    walk(root_, "");
  }

 private:
  YAML::Node lookup(const std::string& path) const {
    YAML::Node cur;
    cur.reset(root_);
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) {
      const YAML::Node& view = cur;
      if (!view.IsMap() || !view[part]) return YAML::Node(YAML::NodeType::Undefined);
      cur.reset(view[part]);
    }
    return cur;
  }

  void walk(const YAML::Node& node, const std::string& prefix) const {
    for (const auto& kv : node) {
      const std::string key = prefix.empty() ? kv.first.as<std::string>() : prefix + "." + kv.first.as<std::string>();
      if (kv.second.IsMap()) {
        bool section = false;
        for (const auto& s : seen_)
          if (s.rfind(key + ".", 0) == 0) section = true;
        if (!section) throw ConfigError(key, "unknown configuration key");
        walk(kv.second, key);
      } else if (!seen_.count(key)) {
        throw ConfigError(key, "unknown configuration key");
      }
    }
  }

  YAML::Node root_;
  std::set<std::string> seen_;
};

ExperimentConfig from_node(const YAML::Node& root) {
  ExperimentConfig c;
  Reader r(root);
  auto& d = c.data;
  r.get("data", "manifest", d.manifest);
  r.get("data", "root", d.root);
  r.get("data", "height", d.height);
  r.get("data", "width", d.width);
  r.get("data", "acceleration", d.acceleration);
  r.get("data", "center_lines", d.center_lines);
  r.get("data", "split_seed", d.split_seed);
  r.get("data", "mask_seed", d.mask_seed);
  r.get("data", "phase_seed", d.phase_seed);
  r.get("data", "noise_sigma", d.noise_sigma);
  r.get("data", "per_frame_masks", d.per_frame_masks);

  auto& k = c.net.knet;
  r.get("knet", "depth", k.depth);
  r.get("knet", "base_channels", k.base_channels);
  r.get("knet", "data_consistency", k.use_data_consistency);

  auto& g = c.net.mgda;
  std::string mode = to_string(g.mode);
  r.get("mgda", "enabled", g.enabled);
  r.get("mgda", "channels", g.channels);
  r.get("mgda", "extractor_blocks", g.extractor_blocks);
  r.get("mgda", "pyramid_levels", g.pyramid_levels);
  r.get("mgda", "flow_channels", g.flow_channels);
  r.get("mgda", "flow_kernel", g.flow_kernel);
  r.get("mgda", "propagation", mode);
  r.get("mgda", "offset_groups", g.offset_groups);
  r.get("mgda", "offset_clamp_fraction", g.offset_clamp_fraction);
  r.get("mgda", "backbone_blocks", g.backbone_blocks);
  try {
    g.mode = propagation_mode_from_string(mode);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("mgda.propagation", e.what());
  }

  auto& m = c.net.mrf;
  std::vector<int> heads(m.heads.begin(), m.heads.end());
  std::string block = to_string(m.variant);
  r.get("mrf", "enabled", m.enabled);
  r.get("mrf", "stages", m.stages);
  r.get("mrf", "channels", m.channels);
  r.get("mrf", "window", m.window);
  r.get("mrf", "heads", heads);
  r.get("mrf", "block_type", block);
  r.get("mrf", "blocks_per_stage", m.blocks_per_stage);
  r.get("mrf", "mlp_ratio", m.mlp_ratio);
  if (heads.size() != 3) throw ConfigError("mrf.heads", "expected three entries, one per branch");
  std::copy(heads.begin(), heads.end(), m.heads.begin());
  try {
    m.variant = mrf_variant_from_string(block);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("mrf.block_type", e.what());
  }

  auto& t = c.train;
  r.get("train", "learning_rate", t.learning_rate);
  r.get("train", "epochs", t.epochs);
  r.get("train", "max_steps", t.max_steps);
  r.get("train", "batch_size", t.batch_size);
  r.get("train", "weight_decay", t.weight_decay);
  r.get("train", "plateau.factor", t.plateau.factor);
  r.get("train", "plateau.patience", t.plateau.patience);
  r.get("train", "plateau.min_lr", t.plateau.min_lr);
  r.get("train", "mixed_precision", t.mixed_precision);
  r.get("train", "seed", t.seed);
  r.get("train", "val_every", t.val_every);

  r.check_unknown();
  c.validate();
  return c;
}

YAML::Node load_text(const std::string& text) {
  try {
    YAML::Node n = YAML::Load(text);
    if (n.IsNull()) return YAML::Node(YAML::NodeType::Map);
    return n;
  } catch (const YAML::Exception& e) {
    throw ConfigError("<yaml>", e.what());
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& yaml_text) { return from_node(load_text(yaml_text)); }

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_yaml(const ExperimentConfig& config) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << to_node(config);
  return std::string(out.c_str()) + "\n";
}

std::string config_hash(const ExperimentConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_yaml(config))));
  return buf;
}

bool schema_has_key(const std::string& dotted_key) {
  const YAML::Node root = to_node(ExperimentConfig{});
  YAML::Node cur;
  cur.reset(root);
  std::stringstream ss(dotted_key);
  std::string part;
  while (std::getline(ss, part, '.')) {
    const YAML::Node& view = cur;
    if (!view.IsMap() || !view[part]) return false;
    cur.reset(view[part]);
  }
  return !cur.IsMap();
}

ExperimentConfig with_overrides(const ExperimentConfig& base, const std::vector<std::pair<std::string, std::string>>& overrides) {
  YAML::Node root = to_node(base);
  for (const auto& [key, value] : overrides) {
    if (!schema_has_key(key)) throw ConfigError(key, "unknown configuration key");
    std::vector<std::string> parts;
    std::stringstream ss(key);
    for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
    YAML::Node cur;
    cur.reset(root);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) cur.reset(cur[parts[i]]);
    cur[parts.back()] = load_text(value);
  }
  return from_node(root);
}

}  // namespace cine
