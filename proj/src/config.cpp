#include "transsleep/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <type_traits>

namespace transsleep::config {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& text, const char* expected) {
  throw ConfigError("config key '" + key + "': expected " + expected + ", got '" + text + "'");
}

template <class T>
T parse_number(const std::string& text, const std::string& key, const char* expected) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) bad_value(key, text, expected);
  return value;
}

std::string unquote(const std::string& text, const std::string& key) {
  if (text.size() < 2 || text.front() != '"' || text.back() != '"') bad_value(key, text, "a quoted string");
  std::string out;
  for (std::size_t i = 1; i + 1 < text.size(); ++i) {
    char c = text[i];
    if (c == '"') bad_value(key, text, "a quoted string");
    if (c == '\\') {
      if (i + 2 >= text.size()) bad_value(key, text, "a quoted string");
      switch (text[++i]) {
        case '"': c = '"'; break;
        case '\\': c = '\\'; break;
        case 'n': c = '\n'; break;
        case 't': c = '\t'; break;
        default: bad_value(key, text, "a string with \\\" \\\\ \\n or \\t escapes");
      }
    }
    out.push_back(c);
  }
  return out;
}

template <class T>
T parse_value(const std::string& text, const std::string& key) {
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true") return true;
    if (text == "false") return false;
    bad_value(key, text, "true or false");
  } else if constexpr (std::is_same_v<T, double>) {
    const double v = parse_number<double>(text, key, "a number");
    if (!std::isfinite(v)) bad_value(key, text, "a finite number");
    return v;
  } else if constexpr (std::is_integral_v<T>) {
    return parse_number<T>(text, key, std::is_signed_v<T> ? "an integer" : "a non-negative integer");
  } else if constexpr (std::is_same_v<T, std::string>) {
    return unquote(text, key);
  } else {
    // std::array<std::size_t, N>
    T out{};
    if (text.size() < 2 || text.front() != '[' || text.back() != ']') bad_value(key, text, "an array");
    std::stringstream items(text.substr(1, text.size() - 2));
    std::string item;
    std::size_t n = 0;
    while (std::getline(items, item, ',')) {
      if (n == out.size()) bad_value(key, text, ("an array of " + std::to_string(out.size()) + " integers").c_str());
      out[n++] = parse_value<typename T::value_type>(trim(item), key);
    }
    if (n != out.size()) bad_value(key, text, ("an array of " + std::to_string(out.size()) + " integers").c_str());
    return out;
  }
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out.push_back(c);
    }
  }
  return out + "\"";
}

template <class T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, double>) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, ptr);
    if (s.find_first_of(".e") == std::string::npos) s += ".0";
    return s;
  } else if constexpr (std::is_integral_v<T>) {
    return std::to_string(v);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return quote(v);
  } else {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
    return s + "]";
  }
}

struct Entry {
  std::string section;
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Ref>
Entry field(const std::string& section, const std::string& name, Ref ref) {
  using T = std::remove_reference_t<decltype(ref(std::declval<RunConfig&>()))>;
  const std::string key = section + "." + name;
  return {section, name, [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_value<T>(v, key); },
          [ref](const RunConfig& c) { return format_value<T>(ref(const_cast<RunConfig&>(c))); }};
}

const std::vector<Entry>& table() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> t;
    t.push_back(field("model", "stride", [](RunConfig& c) -> auto& { return c.model.amf.stride; }));
    t.push_back(field("model", "spectral_kernels", [](RunConfig& c) -> auto& { return c.model.amf.spectral_kernels; }));
    t.push_back(field("model", "temporal_kernels_a", [](RunConfig& c) -> auto& { return c.model.amf.temporal_kernels_a; }));
    t.push_back(field("model", "temporal_kernels_b", [](RunConfig& c) -> auto& { return c.model.amf.temporal_kernels_b; }));
    t.push_back(field("model", "f0", [](RunConfig& c) -> auto& { return c.model.amf.f0; }));
    t.push_back(field("model", "widths", [](RunConfig& c) -> auto& { return c.model.amf.widths; }));
    t.push_back(field("model", "heads", [](RunConfig& c) -> auto& { return c.model.amf.heads; }));
    t.push_back(field("model", "pooled_length", [](RunConfig& c) -> auto& { return c.model.amf.pooled_length; }));
    t.push_back(field("model", "positional_encoding", [](RunConfig& c) -> auto& { return c.model.amf.positional_encoding; }));
    t.push_back(field("model", "hidden", [](RunConfig& c) -> auto& { return c.model.ce.hidden; }));
    t.push_back(field("model", "sequence_length", [](RunConfig& c) -> auto& { return c.model.ce.sequence_length; }));
    t.push_back(field("model", "dropout", [](RunConfig& c) -> auto& { return c.model.ce.dropout; }));
    t.push_back(field("model", "concat_inputs", [](RunConfig& c) -> auto& { return c.model.ce.concat_inputs; }));

    t.push_back(field("train", "lr", [](RunConfig& c) -> auto& { return c.train.adam.lr; }));
    t.push_back(field("train", "beta1", [](RunConfig& c) -> auto& { return c.train.adam.beta1; }));
    t.push_back(field("train", "beta2", [](RunConfig& c) -> auto& { return c.train.adam.beta2; }));
    t.push_back(field("train", "epsilon", [](RunConfig& c) -> auto& { return c.train.adam.epsilon; }));
    t.push_back(field("train", "weight_decay", [](RunConfig& c) -> auto& { return c.train.adam.weight_decay; }));
    t.push_back(field("train", "batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }));
    t.push_back(field("train", "micro_batch", [](RunConfig& c) -> auto& { return c.train.micro_batch; }));
    t.push_back(field("train", "max_epochs", [](RunConfig& c) -> auto& { return c.train.max_epochs; }));
    t.push_back(field("train", "patience", [](RunConfig& c) -> auto& { return c.train.patience; }));
    t.push_back(field("train", "seed", [](RunConfig& c) -> auto& { return c.train.seed; }));
    t.push_back({"train", "ablation",
                 [](RunConfig& c, const std::string& v) {
                   c.train.ablation = ablation_from_name(parse_value<std::string>(v, "train.ablation"));
                 },
                 [](const RunConfig& c) { return quote(ablation_name(c.train.ablation)); }});
    t.push_back(field("train", "lambda_c", [](RunConfig& c) -> auto& { return c.train.lambda_c; }));
    t.push_back(field("train", "lambda_s", [](RunConfig& c) -> auto& { return c.train.lambda_s; }));
    t.push_back(field("train", "lambda_t", [](RunConfig& c) -> auto& { return c.train.lambda_t; }));
    t.push_back(field("train", "overlapping", [](RunConfig& c) -> auto& { return c.train.overlapping; }));
    t.push_back(field("train", "threads", [](RunConfig& c) -> auto& { return c.train.threads; }));

    t.push_back(field("cv", "folds", [](RunConfig& c) -> auto& { return c.folds; }));
    t.push_back(field("cv", "seed", [](RunConfig& c) -> auto& { return c.fold_seed; }));

    t.push_back(field("data", "data_dir", [](RunConfig& c) -> auto& { return c.data_dir; }));
    t.push_back(field("data", "cache_dir", [](RunConfig& c) -> auto& { return c.cache_dir; }));
    t.push_back(field("data", "out_dir", [](RunConfig& c) -> auto& { return c.out_dir; }));
    t.push_back(field("data", "channel", [](RunConfig& c) -> auto& { return c.pipeline.channel; }));
    t.push_back({"data", "fs",
                 [](RunConfig& c, const std::string& v) {
                   c.pipeline.filter.fs = parse_value<double>(v, "data.fs");
                   c.model.amf.fs = c.pipeline.filter.fs;
                 },
                 [](const RunConfig& c) { return format_value(c.pipeline.filter.fs); }});
    t.push_back(field("data", "low_hz", [](RunConfig& c) -> auto& { return c.pipeline.filter.low_hz; }));
    t.push_back(field("data", "high_hz", [](RunConfig& c) -> auto& { return c.pipeline.filter.high_hz; }));
    t.push_back(field("data", "filter_order", [](RunConfig& c) -> auto& { return c.pipeline.filter.order; }));
    t.push_back(field("data", "epoch_seconds", [](RunConfig& c) -> auto& { return c.pipeline.epoch_seconds; }));
    t.push_back(field("data", "max_wake_epochs", [](RunConfig& c) -> auto& { return c.pipeline.max_wake_epochs; }));
    t.push_back(field("data", "per_epoch_normalization",
                      [](RunConfig& c) -> auto& { return c.pipeline.per_epoch_normalization; }));
    return t;
  }();
  return entries;
}

const Entry& find(const std::string& key) {
  for (const Entry& e : table()) {
    if (e.section + "." + e.name == key) return e;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

// Drops a trailing comment that is not inside a string.
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && in_string) {
      ++i;
    } else if (line[i] == '"') {
      in_string = !in_string;
    } else if (line[i] == '#' && !in_string) {
      return line.substr(0, i);
    }
  }
  return line;
}

}  // namespace

std::string ablation_name(const train::Ablation& a) {
  if (a.eta && a.aux_stage && a.aux_transition) return "full";
  if (!a.eta && a.aux_stage && a.aux_transition) return "case1";
  if (a.eta && !a.aux_stage && !a.aux_transition) return "case2";
  if (a.eta && a.aux_stage && !a.aux_transition) return "case3";
  throw ConfigError("ablation flags do not match a named variant");
}

train::Ablation ablation_from_name(const std::string& name) {
  if (name == "full") return train::Ablation::full();
  if (name == "case1") return train::Ablation::case1();
  if (name == "case2") return train::Ablation::case2();
  if (name == "case3") return train::Ablation::case3();
  throw ConfigError("unknown ablation '" + name + "' (expected full, case1, case2 or case3)");
}

std::vector<std::string> keys() {
  std::vector<std::string> out;
  for (const Entry& e : table()) out.push_back(e.section + "." + e.name);
  return out;
}

void set(RunConfig& cfg, const std::string& key, const std::string& value) { find(key).set(cfg, trim(value)); }

std::string get(const RunConfig& cfg, const std::string& key) { return find(key).get(cfg); }

RunConfig parse(const std::string& text, const std::string& source) {
  std::set<std::string> sections;
  for (const Entry& e : table()) sections.insert(e.section);
  RunConfig cfg;
  std::set<std::string> seen_keys, seen_sections;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    try {
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("malformed section header '" + line + "'");
        section = trim(std::string_view(line).substr(1, line.size() - 2));
        if (!sections.count(section)) throw ConfigError("unknown section [" + section + "]");
        if (!seen_sections.insert(section).second) throw ConfigError("duplicate section [" + section + "]");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("expected 'key = value', got '" + line + "'");
      const std::string name = trim(std::string_view(line).substr(0, eq));
      if (section.empty()) throw ConfigError("key '" + name + "' appears before any [section]");
      const std::string key = section + "." + name;
      const Entry& e = find(key);
      if (!seen_keys.insert(key).second) throw ConfigError("duplicate config key '" + key + "'");
      e.set(cfg, trim(std::string_view(line).substr(eq + 1)));
    } catch (const ConfigError& err) {
      throw ConfigError(where + err.what());
    }
  }
  return cfg;
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string to_toml(const RunConfig& cfg) {
  std::string out, section;
  for (const Entry& e : table()) {
    if (e.section != section) {
      out += (section.empty() ? "[" : "\n[") + e.section + "]\n";
      section = e.section;
    }
    out += e.name + " = " + e.get(cfg) + "\n";
  }
  return out;
}

void validate(const RunConfig& cfg) {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  const auto& t = cfg.train;
  const auto& m = cfg.model;
  check(t.batch_size >= 1, "train.batch_size must be at least 1");
  check(t.micro_batch >= 1 && t.micro_batch <= t.batch_size, "train.micro_batch must be in [1, train.batch_size]");
  check(t.max_epochs >= 1, "train.max_epochs must be at least 1");
  check(t.patience < t.max_epochs, "train.patience must be below train.max_epochs");
  check(t.adam.lr > 0.0, "train.lr must be positive");
  check(t.adam.beta1 >= 0.0 && t.adam.beta1 < 1.0 && t.adam.beta2 >= 0.0 && t.adam.beta2 < 1.0,
        "train.beta1 and train.beta2 must be in [0, 1)");
  check(t.adam.epsilon > 0.0, "train.epsilon must be positive");
  check(t.adam.weight_decay >= 0.0, "train.weight_decay must be non-negative");
  check(t.lambda_c >= 0.0 && t.lambda_s >= 0.0 && t.lambda_t >= 0.0, "loss weights must be non-negative");
  check(t.threads >= 1, "train.threads must be at least 1");
  check(cfg.folds >= 2, "cv.folds must be at least 2");
  check(m.ce.dropout >= 0.0 && m.ce.dropout < 1.0, "model.dropout must be in [0, 1)");
  check(m.ce.hidden >= 1 && m.ce.sequence_length >= 1, "model.hidden and model.sequence_length must be positive");
  check(m.amf.f0 >= 1 && m.amf.stride >= 1 && m.amf.pooled_length >= 1, "model.f0, stride and pooled_length must be positive");
  check(m.amf.heads >= 1, "model.heads must be at least 1");
  for (std::size_t w : m.amf.widths) {
    check(w >= 1 && w % m.amf.heads == 0, "model.widths must be positive multiples of model.heads");
  }
  const double samples = cfg.pipeline.epoch_seconds * cfg.pipeline.filter.fs;
  check(samples == static_cast<double>(kEpochSamples),
        "data.epoch_seconds * data.fs must equal " + std::to_string(kEpochSamples) + " samples");
  check(cfg.pipeline.filter.low_hz > 0.0 && cfg.pipeline.filter.low_hz < cfg.pipeline.filter.high_hz &&
            cfg.pipeline.filter.high_hz < cfg.pipeline.filter.fs / 2.0,
        "data.low_hz and data.high_hz must satisfy 0 < low < high < fs/2");
  check(cfg.pipeline.filter.order >= 1, "data.filter_order must be at least 1");
}

void require(const RunConfig& cfg, const std::vector<std::string>& required) {
  for (const std::string& key : required) {
    if (get(cfg, key) == "\"\"") throw ConfigError("missing required config key '" + key + "'");
  }
}

}  // namespace transsleep::config
