#include "pfvg/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "pfvg/errors.hpp"

namespace pfvg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || text.empty()) {
    throw ConfigError("invalid value for " + key + ": '" + text + "'", key);
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") {
    return true;
  }
  if (text == "false" || text == "0" || text == "no" || text == "off") {
    return false;
  }
  throw ConfigError("invalid boolean for " + key + ": '" + text + "'", key);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') {
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value", t);
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) {
      throw ConfigError("line " + std::to_string(lineno) + ": empty key", "");
    }
    if (kv.count(key)) {
      throw ConfigError("duplicate key " + key, key);
    }
    kv[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

std::string format_key_values(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k + " = " + v + "\n";
  }
  return out;
}

std::map<std::string, std::string> RunConfig::to_map() const {
  auto kv = model.to_map();
  kv["learning_rate"] = format_double(learning_rate);
  kv["accumulation_window"] = std::to_string(accumulation_window);
  kv["stage1_steps"] = std::to_string(stage1_steps);
  kv["stage2_steps"] = std::to_string(stage2_steps);
  kv["stage2_mode"] = to_string(stage2_mode);
  kv["curriculum"] = curriculum ? "true" : "false";
  kv["stages"] = std::to_string(stages);
  kv["checkpoint_every"] = std::to_string(checkpoint_every);
  kv["resume_from"] = resume_from;
  kv["log_wall_time"] = log_wall_time ? "true" : "false";
  kv["seed"] = std::to_string(seed);
  kv["corpus_dir"] = corpus_dir;
  kv["corpus_videos"] = std::to_string(corpus_videos);
  kv["corpus_histogram"] = corpus_histogram;
  kv["corpus_seed"] = std::to_string(corpus_seed);
  kv["sampling_steps"] = std::to_string(sampling_steps);
  kv["output_dir"] = output_dir;
  return kv;
}

RunConfig RunConfig::from_map(const std::map<std::string, std::string>& kv) {
  RunConfig c;
  const auto known_keys = c.to_map();
  for (const auto& [k, v] : kv) {
    if (!known_keys.count(k)) {
      throw ConfigError("unknown config key: " + k, k);
    }
  }
  c.model = ModelConfig::from_map(kv);
  c.model.validate();

  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto* v = get("learning_rate")) {
    c.learning_rate = parse_number<double>("learning_rate", *v);
    if (!(c.learning_rate > 0.0)) {
      throw ConfigError("learning_rate must be positive", "learning_rate");
    }
  }
  if (auto* v = get("accumulation_window")) {
    c.accumulation_window = parse_number<std::size_t>("accumulation_window", *v);
  }
  if (auto* v = get("stage1_steps")) {
    c.stage1_steps = parse_number<std::uint64_t>("stage1_steps", *v);
  }
  if (auto* v = get("stage2_steps")) {
    c.stage2_steps = parse_number<std::uint64_t>("stage2_steps", *v);
  }
  if (auto* v = get("stage2_mode")) {
    try {
      c.stage2_mode = parse_forcing_mode(*v);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), "stage2_mode");
    }
  }
  if (auto* v = get("curriculum")) {
    c.curriculum = parse_bool("curriculum", *v);
  }
  if (auto* v = get("stages")) {
    c.stages = parse_number<int>("stages", *v);
    if (c.stages != 1 && c.stages != 2) {
      throw ConfigError("stages must be 1 or 2", "stages");
    }
  }
  if (auto* v = get("checkpoint_every")) {
    c.checkpoint_every = parse_number<std::uint64_t>("checkpoint_every", *v);
  }
  if (auto* v = get("resume_from")) {
    c.resume_from = *v;
  }
  if (auto* v = get("log_wall_time")) {
    c.log_wall_time = parse_bool("log_wall_time", *v);
  }
  if (auto* v = get("seed")) {
    c.seed = parse_number<std::uint64_t>("seed", *v);
  }
  if (auto* v = get("corpus_dir")) {
    c.corpus_dir = *v;
  }
  if (auto* v = get("corpus_videos")) {
    c.corpus_videos = parse_number<std::size_t>("corpus_videos", *v);
    if (c.corpus_videos == 0) {
      throw ConfigError("corpus_videos must be >= 1", "corpus_videos");
    }
  }
  if (auto* v = get("corpus_histogram")) {
    try {
      parse_histogram(*v);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), "corpus_histogram");
    }
    c.corpus_histogram = *v;
  }
  if (auto* v = get("corpus_seed")) {
    c.corpus_seed = parse_number<std::uint64_t>("corpus_seed", *v);
  }
  if (auto* v = get("sampling_steps")) {
    c.sampling_steps = parse_number<std::size_t>("sampling_steps", *v);
    if (c.sampling_steps == 0) {
      throw ConfigError("sampling_steps must be >= 1", "sampling_steps");
    }
  }
  if (auto* v = get("output_dir")) {
    c.output_dir = *v;
  }
  return c;
}

TwoStageConfig RunConfig::two_stage() const {
  TwoStageConfig t;
  t.model = model;
  t.train.learning_rate = learning_rate;
  t.train.accumulation_window = accumulation_window;
  t.train.curriculum = curriculum;
  t.train.seed = seed;
  t.model_seed = seed;
  t.stage1_steps = stage1_steps;
  t.stage2_steps = stage2_steps;
  t.stage2_mode = stage2_mode;
  t.stages = stages;
  t.checkpoint_every = checkpoint_every;
  t.log_wall_time = log_wall_time;
  t.output_dir = output_dir;
  if (!resume_from.empty()) {
    t.resume_from = resume_from;
  }
  return t;
}

FrameGeometry RunConfig::geometry() const {
  return FrameGeometry{model.frames_per_segment, model.frame_height, model.frame_width,
                       model.channels};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw ConfigError("cannot read config file " + path.string(), "config");
  }
  std::stringstream ss;
  ss << is.rdbuf();
  return RunConfig::from_map(parse_key_values(ss.str()));
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) {
    throw FormatError("cannot open " + path.string() + " for writing");
  }
  os << format_key_values(cfg.to_map());
}

} // namespace pfvg
