#include "latentdial/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

extern char** environ;

namespace latentdial {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool parse_bool(const std::string& key, const std::string& v) {
  const auto l = lower(v);
  if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
  if (l == "false" || l == "0" || l == "no" || l == "off") return false;
  throw std::invalid_argument(key + ": expected a boolean, got '" + v + "'");
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] != '-') out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size())
    throw std::invalid_argument(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt(bool v) { return v ? "true" : "false"; }

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    auto str = [&](const std::string& key, std::string RunConfig::*m) {
      f[key] = {[m](RunConfig& c, const std::string&, const std::string& v) { c.*m = v; },
                [m](const RunConfig& c) { return c.*m; }};
    };
    auto sz = [&](const std::string& key, auto getter) {
      f[key] = {[getter](RunConfig& c, const std::string& k, const std::string& v) {
                  getter(c) = static_cast<std::remove_reference_t<decltype(getter(c))>>(parse_uint(k, v));
                },
                [getter](const RunConfig& c) { return std::to_string(getter(const_cast<RunConfig&>(c))); }};
    };
    auto real = [&](const std::string& key, auto getter) {
      f[key] = {[getter](RunConfig& c, const std::string& k, const std::string& v) { getter(c) = parse_real(k, v); },
                [getter](const RunConfig& c) { return fmt(getter(const_cast<RunConfig&>(c))); }};
    };
    auto flag = [&](const std::string& key, auto getter) {
      f[key] = {[getter](RunConfig& c, const std::string& k, const std::string& v) { getter(c) = parse_bool(k, v); },
                [getter](const RunConfig& c) { return fmt(getter(const_cast<RunConfig&>(c))); }};
    };

    f["data.train"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.data.train = v; },
                       [](const RunConfig& c) { return c.data.train; }};
    f["data.validation"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.data.validation = v; },
                            [](const RunConfig& c) { return c.data.validation; }};
    f["data.vocab"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.data.vocab = v; },
                       [](const RunConfig& c) { return c.data.vocab; }};
    sz("data.min_freq", [](RunConfig& c) -> int& { return c.data.min_freq; });

    f["model.kind"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.model.kind = model_kind_from_string(v); },
                       [](const RunConfig& c) { return to_string(c.model.kind); }};
    sz("model.embedding_dim", [](RunConfig& c) -> std::size_t& { return c.model.embedding_dim; });
    sz("model.k_correlated", [](RunConfig& c) -> std::size_t& { return c.model.k_correlated; });
    sz("model.k_uncorrelated", [](RunConfig& c) -> std::size_t& { return c.model.k_uncorrelated; });
    sz("model.decoder_hidden", [](RunConfig& c) -> std::size_t& { return c.model.decoder_hidden; });
    flag("model.attention", [](RunConfig& c) -> bool& { return c.model.attention; });
    sz("model.attention_bottleneck_dim", [](RunConfig& c) -> std::size_t& { return c.model.attention_bottleneck_dim; });
    real("model.init_scale", [](RunConfig& c) -> double& { return c.model.init_scale; });

    real("loss.lambda1", [](RunConfig& c) -> double& { return c.train.loss.lambda1; });
    real("loss.lambda2", [](RunConfig& c) -> double& { return c.train.loss.lambda2; });
    real("loss.lambda3", [](RunConfig& c) -> double& { return c.train.loss.lambda3; });
    real("loss.lambda4", [](RunConfig& c) -> double& { return c.train.loss.lambda4; });
    real("loss.lambda5", [](RunConfig& c) -> double& { return c.train.loss.lambda5; });
    real("loss.lambda6", [](RunConfig& c) -> double& { return c.train.loss.lambda6; });

    real("train.lr", [](RunConfig& c) -> double& { return c.train.adam.lr; });
    real("train.beta1", [](RunConfig& c) -> double& { return c.train.adam.beta1; });
    real("train.beta2", [](RunConfig& c) -> double& { return c.train.adam.beta2; });
    real("train.eps", [](RunConfig& c) -> double& { return c.train.adam.eps; });
    sz("train.batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    flag("train.drop_last", [](RunConfig& c) -> bool& { return c.train.drop_last; });
    real("train.replace_prob", [](RunConfig& c) -> double& { return c.train.replace_prob; });
    real("train.clip_norm", [](RunConfig& c) -> double& { return c.train.clip_norm; });
    sz("train.max_epochs", [](RunConfig& c) -> std::size_t& { return c.train.max_epochs; });
    sz("train.max_steps", [](RunConfig& c) -> std::size_t& { return c.train.max_steps; });
    sz("train.patience", [](RunConfig& c) -> std::size_t& { return c.train.patience; });
    sz("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    flag("train.no_uncorrelated", [](RunConfig& c) -> bool& { return c.train.no_uncorrelated; });
    flag("train.no_denoising", [](RunConfig& c) -> bool& { return c.train.no_denoising; });
    sz("train.checkpoint_every_epochs", [](RunConfig& c) -> std::size_t& { return c.train.checkpoint_every_epochs; });
    sz("train.validate_every_epochs", [](RunConfig& c) -> std::size_t& { return c.train.validate_every_epochs; });

    f["generate.mode"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.generate.mode = decode_mode_from_string(v); },
                          [](const RunConfig& c) { return to_string(c.generate.mode); }};
    sz("generate.beam_width", [](RunConfig& c) -> std::size_t& { return c.generate.beam_width; });
    real("generate.alpha", [](RunConfig& c) -> double& { return c.generate.length_norm_alpha; });
    real("generate.nucleus_p", [](RunConfig& c) -> double& { return c.generate.nucleus_p; });
    sz("generate.max_length", [](RunConfig& c) -> std::size_t& { return c.generate.max_length; });
    f["generate.r_policy"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.generate.r_policy = r_policy_from_string(v); },
                              [](const RunConfig& c) { return to_string(c.generate.r_policy); }};
    sz("generate.seed", [](RunConfig& c) -> std::uint64_t& { return c.generate.rng_seed; });

    str("eval.embeddings", &RunConfig::eval_embeddings);
    str("eval.annotations", &RunConfig::eval_annotations);
    str("inspect.metric", &RunConfig::inspect_metric);
    sz("inspect.k", [](RunConfig& c) -> std::size_t& { return c.inspect_k; });
    sz("inspect.samples", [](RunConfig& c) -> std::size_t& { return c.inspect_samples; });
    return f;
  }();
  return table;
}

const std::vector<std::string> kSections = {"data", "model", "loss", "train", "generate", "eval", "inspect"};

}  // namespace

RunConfig RunConfig::from_preset(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "full") {
    c.model = ModelConfig{};  // 512/10, embedding 128, uniform +-0.08 init
    return c;
  }
  if (name == "toy") {
    c.model.embedding_dim = 64;
    c.model.k_correlated = 32;
    c.model.k_uncorrelated = 4;
    c.model.decoder_hidden = 64;
    c.data.min_freq = 1;
    c.train.adam.lr = 0.003;
    c.train.loss.lambda1 = 0.5;
    c.train.loss.lambda5 = 64.0;
    c.train.max_epochs = 60;
    c.train.patience = 0;
    c.generate.max_length = 12;
    return c;
  }
  if (name == "baseline") {
    c.model.kind = ModelKind::Baseline;
    c.model.k_correlated = 522;
    c.model.k_uncorrelated = 0;
    c.model.decoder_hidden = 522;
    c.model.attention = true;
    c.model.attention_bottleneck_dim = 0;
    return c;
  }
  throw std::invalid_argument("unknown preset '" + name + "' (expected full|toy|baseline)");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& f = fields();
  const auto it = f.find(key);
  if (it == f.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  it->second.set(*this, key, value);
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, f] : fields()) out.push_back(k);
  return out;
}

std::map<std::string, std::string> RunConfig::flatten() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(*this);
  return out;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = {{"preset", preset}};
  for (const auto& [k, v] : flatten()) j["values"][k] = v;
  return j;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "preset = " << preset << '\n';
  for (const auto& [k, v] : flatten()) os << k << " = " << v << '\n';
  return os.str();
}

void RunConfig::validate() const {
  train.validate();
  generate.validate();
  if (data.min_freq < 1) throw std::invalid_argument("data.min_freq must be >= 1");
  if (inspect_metric != "euclidean" && inspect_metric != "cosine")
    throw std::invalid_argument("inspect.metric must be euclidean or cosine");
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
    out.emplace_back(key, value);
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::vector<std::pair<std::string, std::string>> env_overrides(const std::vector<std::string>& environment) {
  std::vector<std::pair<std::string, std::string>> out;
  const std::string prefix = kEnvPrefix;
  for (const auto& entry : environment) {
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    const std::string name = entry.substr(prefix.size(), eq - prefix.size());
    const auto us = name.find('_');
    if (us == std::string::npos) continue;
    const std::string section = lower(name.substr(0, us));
    if (std::find(kSections.begin(), kSections.end(), section) == kSections.end()) continue;
    out.emplace_back(section + "." + lower(name.substr(us + 1)), entry.substr(eq + 1));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> current_environment() {
  std::vector<std::string> out;
  for (char** e = environ; e && *e; ++e) out.emplace_back(*e);
  return out;
}

RunConfig resolve_config(const ConfigSources& src) {
  std::vector<std::pair<std::string, std::string>> file_values;
  if (!src.file.empty()) file_values = read_config_file(src.file);

  std::string preset = "full";
  for (const auto& [k, v] : file_values)
    if (k == "preset") preset = v;
  if (!src.preset.empty()) preset = src.preset;

  RunConfig cfg = RunConfig::from_preset(preset);
  for (const auto& [k, v] : file_values)
    if (k != "preset") cfg.set(k, v);
  for (const auto& [k, v] : env_overrides(src.environment)) cfg.set(k, v);
  for (const auto& [k, v] : src.overrides) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

}  // namespace latentdial
