#include "run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "ssar/errors.hpp"

namespace ssar::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool is_known(const std::string& key) {
  const auto& keys = known_keys();
  return std::any_of(keys.begin(), keys.end(), [&](const auto& kv) { return kv.first == key; });
}

std::size_t to_size(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double out = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

std::array<std::size_t, 2> to_hw(const std::string& key, const std::string& value) {
  const auto comma = value.find(',');
  if (comma == std::string::npos) throw ConfigError(key + ": expected H,W, got '" + value + "'");
  return {to_size(key, trim(value.substr(0, comma))), to_size(key, trim(value.substr(comma + 1)))};
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& known_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"data.manifest", ""},
      {"data.axis", "2"},
      {"data.target_hw", "50,50"},
      {"data.n_slices", "36"},
      {"data.normalize_by", "std"},
      {"model.stem_channels", ""},
      {"model.stem_kernel", ""},
      {"model.stem_stride", ""},
      {"model.stem_maxpool", ""},
      {"model.widths", ""},
      {"model.blocks_per_stage", ""},
      {"model.pool_k", "3"},
      {"model.hidden", "64"},
      {"train.lr0", "1e-4"},
      {"train.halve_every", "15"},
      {"train.epochs", "60"},
      {"train.batch_size", "1"},
      {"train.seed", "0"},
      {"train.adam_beta1", "0.9"},
      {"train.adam_beta2", "0.999"},
      {"train.adam_eps", "1e-8"},
      {"train.checkpoint_every", "15"},
      {"threads", "1"},
  };
  return keys;
}

Settings read_settings_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  Settings settings;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const auto key = trim(text.substr(0, eq));
    if (!is_known(key)) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    settings[key] = trim(text.substr(eq + 1));
  }
  if (auto it = settings.find("data.manifest"); it != settings.end() && !it->second.empty()) {
    std::filesystem::path p(it->second);
    if (p.is_relative()) it->second = (path.parent_path() / p).lexically_normal().string();
  }
  return settings;
}

void apply_overrides(Settings& settings, const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + item + "' must be key=value");
    const auto key = trim(item.substr(0, eq));
    if (!is_known(key)) throw ConfigError("unknown key '" + key + "'");
    settings[key] = trim(item.substr(eq + 1));
  }
}

RunConfig resolve(const Settings& settings, ModelKind kind) {
  for (const auto& [key, value] : settings) {
    if (!is_known(key)) throw ConfigError("unknown key '" + key + "'");
  }
  Settings s;
  for (const auto& [key, def] : known_keys()) {
    auto it = settings.find(key);
    if (it != settings.end()) {
      s[key] = it->second;
    } else if (!def.empty()) {
      s[key] = def;
    }
  }

  RunConfig rc;
  rc.kind = kind;
  if (s.count("data.manifest") == 0 || s["data.manifest"].empty()) throw ConfigError("data.manifest is required");
  rc.manifest = s["data.manifest"];
  rc.pipeline.axis = to_size("data.axis", s["data.axis"]);
  rc.pipeline.target_hw = to_hw("data.target_hw", s["data.target_hw"]);
  rc.pipeline.n_slices = to_size("data.n_slices", s["data.n_slices"]);
  rc.pipeline.normalize_by = parse_normalize_by(s["data.normalize_by"]);
  rc.pipeline.validate();

  rc.train.lr0 = to_double("train.lr0", s["train.lr0"]);
  rc.train.halve_every = to_size("train.halve_every", s["train.halve_every"]);
  rc.train.epochs = to_size("train.epochs", s["train.epochs"]);
  rc.train.batch_size = to_size("train.batch_size", s["train.batch_size"]);
  rc.train.seed = to_size("train.seed", s["train.seed"]);
  rc.train.adam_beta1 = to_double("train.adam_beta1", s["train.adam_beta1"]);
  rc.train.adam_beta2 = to_double("train.adam_beta2", s["train.adam_beta2"]);
  rc.train.adam_eps = to_double("train.adam_eps", s["train.adam_eps"]);
  rc.train.checkpoint_every = to_size("train.checkpoint_every", s["train.checkpoint_every"]);
  rc.train.validate();

  rc.threads = to_size("threads", s["threads"]);
  if (rc.threads == 0) throw ConfigError("threads must be at least 1");

  // Start from the architecture's defaults, then apply explicit model.* keys.
  std::map<std::string, std::string> desc;
  if (kind == ModelKind::SliceSeq) {
    SliceSeqConfig cfg;
    cfg.seq_len = rc.pipeline.n_slices;
    cfg.slice_height = rc.pipeline.target_hw[0];
    cfg.slice_width = rc.pipeline.target_hw[1];
    desc = SliceSeqAgeNet<float>(cfg, 0).descriptor();
  } else {
    desc = Volumetric3DNet<float>(Vol3DConfig{}, 0).descriptor();
  }
  for (const auto& key : {"stem_channels", "stem_kernel", "stem_stride", "stem_maxpool", "widths", "blocks_per_stage"}) {
    auto it = s.find(std::string("model.") + key);
    if (it != s.end()) desc[std::string("backbone.") + key] = it->second;
  }
  if (kind == ModelKind::SliceSeq) {
    desc["sliceseq.pool_k"] = s["model.pool_k"];
    desc["sliceseq.hidden"] = s["model.hidden"];
  }
  rc.model_descriptor = desc;

  rc.resolved = s;
  rc.resolved["model"] = to_string(kind);
  for (const auto& [key, value] : desc) {
    if (key.rfind("backbone.", 0) == 0) rc.resolved["model." + key.substr(9)] = value;
  }
  return rc;
}

std::map<std::string, std::string> pipeline_metadata(const PipelineConfig& pipeline) {
  return {
      {"data.axis", std::to_string(pipeline.axis)},
      {"data.target_hw", std::to_string(pipeline.target_hw[0]) + "," + std::to_string(pipeline.target_hw[1])},
      {"data.n_slices", std::to_string(pipeline.n_slices)},
      {"data.normalize_by", to_string(pipeline.normalize_by)},
  };
}

PipelineConfig pipeline_from_descriptor(const std::map<std::string, std::string>& descriptor) {
  auto get = [&](const std::string& key) {
    auto it = descriptor.find(key);
    if (it == descriptor.end()) throw ConfigError("checkpoint lacks preprocessing setting '" + key + "'");
    return it->second;
  };
  PipelineConfig p;
  p.axis = to_size("data.axis", get("data.axis"));
  p.target_hw = to_hw("data.target_hw", get("data.target_hw"));
  p.n_slices = to_size("data.n_slices", get("data.n_slices"));
  p.normalize_by = parse_normalize_by(get("data.normalize_by"));
  p.validate();
  return p;
}

}  // namespace ssar::cli
