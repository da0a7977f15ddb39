#include "svie/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace svie {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string at(const std::string& source, int line, const std::string& msg) {
  return source + ":" + std::to_string(line) + ": " + msg;
}

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isalnum(c) || c == '_'; });
}

std::optional<double> to_real(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

std::optional<long long> to_integer(const std::string& s) {
  const std::string t = trim(s);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

std::optional<bool> to_bool(const std::string& s) {
  const std::string t = trim(s);
  if (t == "true" || t == "yes" || t == "1" || t == "on") return true;
  if (t == "false" || t == "no" || t == "0" || t == "off") return false;
  return std::nullopt;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::optional<std::vector<double>> to_reals(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    auto v = to_real(item);
    if (!v) return std::nullopt;
    out.push_back(*v);
  }
  if (out.empty()) return std::nullopt;
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
  return s;
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& source) {
  Config cfg;
  cfg.source_ = source;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  std::string current;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find_first_of("#;");
    const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(at(source, line, "unterminated section header"));
      const std::string name = trim(s.substr(1, s.size() - 2));
      if (!valid_name(name)) throw ConfigError(at(source, line, "invalid section name '" + name + "'"));
      if (cfg.sections_.count(name)) throw ConfigError(at(source, line, "duplicate section [" + name + "]"));
      cfg.sections_[name].line = line;
      current = name;
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(at(source, line, "expected 'key = value'"));
    if (current.empty()) throw ConfigError(at(source, line, "key outside of any section"));
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (!valid_name(key)) throw ConfigError(at(source, line, "invalid key '" + key + "'"));
    if (value.empty()) throw ConfigError(at(source, line, "empty value for '" + key + "'"));
    auto& entries = cfg.sections_[current].entries;
    if (entries.count(key)) throw ConfigError(at(source, line, "duplicate key '" + key + "' in [" + current + "]"));
    entries[key] = {value, line};
  }
  return cfg;
}

Config Config::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path + ":0: cannot open file");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path);
}

bool Config::has(const std::string& section) const { return sections_.count(section) > 0; }

bool Config::has(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  return it != sections_.end() && it->second.entries.count(key) > 0;
}

const ConfigSection& Config::section(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end()) throw ConfigError(source_ + ":0: missing section [" + name + "]");
  return it->second;
}

std::string Config::where(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  int line = 0;
  if (it != sections_.end()) {
    auto e = it->second.entries.find(key);
    line = e != it->second.entries.end() ? e->second.line : it->second.line;
  }
  return source_ + ":" + std::to_string(line);
}

std::string Config::str(const std::string& section, const std::string& key,
                        const std::optional<std::string>& fallback) const {
  if (!has(section, key)) {
    if (fallback) return *fallback;
    throw ConfigError(where(section, key) + ": missing key '" + key + "' in [" + section + "]");
  }
  return sections_.at(section).entries.at(key).value;
}

double Config::real(const std::string& section, const std::string& key, std::optional<double> fallback) const {
  if (!has(section, key) && fallback) return *fallback;
  auto v = to_real(str(section, key));
  if (!v) throw ConfigError(where(section, key) + ": '" + key + "' is not a real number");
  return *v;
}

long long Config::integer(const std::string& section, const std::string& key, std::optional<long long> fallback) const {
  if (!has(section, key) && fallback) return *fallback;
  auto v = to_integer(str(section, key));
  if (!v) throw ConfigError(where(section, key) + ": '" + key + "' is not an integer");
  return *v;
}

bool Config::boolean(const std::string& section, const std::string& key, std::optional<bool> fallback) const {
  if (!has(section, key) && fallback) return *fallback;
  auto v = to_bool(str(section, key));
  if (!v) throw ConfigError(where(section, key) + ": '" + key + "' is not a boolean");
  return *v;
}

std::vector<double> Config::reals(const std::string& section, const std::string& key,
                                  const std::optional<std::vector<double>>& fallback) const {
  if (!has(section, key) && fallback) return *fallback;
  auto v = to_reals(str(section, key));
  if (!v) throw ConfigError(where(section, key) + ": '" + key + "' is not a list of reals");
  return *v;
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
  sections_[section].entries[key] = {value, 0};
}

void Config::erase(const std::string& section, const std::string& key) {
  auto it = sections_.find(section);
  if (it != sections_.end()) it->second.entries.erase(key);
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [name, sec] : sections_) {
    for (const auto& [key, e] : sec.entries) out += name + "." + key + "=" + e.value + "\n";
  }
  return out;
}

void validate(const Config& cfg, const Schema& schema) {
  for (const auto& [name, sec] : cfg.sections()) {
    auto s = schema.sections.find(name);
    if (s == schema.sections.end()) {
      throw ConfigError(at(cfg.source(), sec.line, "unknown section [" + name + "]"));
    }
    const auto& fields = s->second;
    const bool open = fields.count("*") > 0;
    for (const auto& [key, e] : sec.entries) {
      auto f = fields.find(key);
      if (f == fields.end()) {
        if (!open) throw ConfigError(at(cfg.source(), e.line, "unknown key '" + key + "' in [" + name + "]"));
        if (!to_real(e.value)) {
          throw ConfigError(at(cfg.source(), e.line, "parameter '" + key + "' must be a real number"));
        }
        continue;
      }
      const FieldSpec& spec = f->second;
      bool ok = true;
      std::string expect;
      switch (spec.type) {
        case FieldType::string: break;
        case FieldType::real: ok = to_real(e.value).has_value(); expect = "a real number"; break;
        case FieldType::integer: ok = to_integer(e.value).has_value(); expect = "an integer"; break;
        case FieldType::boolean: ok = to_bool(e.value).has_value(); expect = "a boolean"; break;
        case FieldType::real_list: ok = to_reals(e.value).has_value(); expect = "a comma-separated list of reals"; break;
        case FieldType::choice:
          ok = std::find(spec.choices.begin(), spec.choices.end(), e.value) != spec.choices.end();
          expect = "one of {" + join(spec.choices) + "}";
          break;
      }
      if (!ok) throw ConfigError(at(cfg.source(), e.line, "'" + key + "' must be " + expect + ", got '" + e.value + "'"));
    }
    for (const auto& [key, spec] : fields) {
      if (spec.required && !sec.entries.count(key)) {
        throw ConfigError(at(cfg.source(), sec.line, "missing required key '" + key + "' in [" + name + "]"));
      }
    }
  }
}

std::vector<std::string> kernel_names() {
  return {"zero", "constant", "fractional", "doubly_singular", "fbm_rl", "fbm_full", "exp_sum",
          "counterexample_sup", "reverse_sqrt"};
}

Schema experiment_schema() {
  using F = FieldSpec;
  const F real{FieldType::real, false, {}};
  const F integer{FieldType::integer, false, {}};
  const F list{FieldType::real_list, false, {}};
  const F text{FieldType::string, false, {}};
  const F boolean{FieldType::boolean, false, {}};
  const F orientation{FieldType::choice, false, {"causal", "anticausal"}};
  const F bsvie_method{FieldType::choice, false, {"fixed_point", "block"}};

  Schema s;
  s.sections["run"] = {{"seed", integer}, {"budget_seconds", real}, {"out", text},
                       {"method", bsvie_method}, {"tol", real}};
  s.sections["tree"] = {{"N", integer}, {"T", real}, {"m", integer}};
  s.sections["kernel"] = {{"name", {FieldType::choice, true, kernel_names()}},
                          {"alpha", real}, {"beta", real}, {"H", real}, {"c", real}, {"scale", real},
                          {"T", real}, {"orientation", orientation}, {"weights", list}, {"rates", list},
                          {"eps_grid", list}};
  s.sections["forward"] = {{"problem", {FieldType::choice, true, forward_examples()}},
                           {"method", {FieldType::choice, false, {"lattice", "picard", "deterministic", "paths"}}},
                           {"N_list", list}, {"paths", integer}, {"steps", integer}, {"tol", real},
                           {"*", real}};
  s.sections["backward"] = {{"problem", {FieldType::choice, true, backward_examples()}},
                            {"method", bsvie_method}, {"tol", real}, {"*", real}};
  s.sections["control"] = {{"problem", {FieldType::choice, true, {"lq", "random_linear", "delay_lq", "delay_lq_zero"}}},
                           {"eps_list", list}, {"steps", integer}, {"rate", real}, {"interior", integer},
                           {"instances", integer}, {"optimize", boolean}, {"*", real}};
  s.sections["suite"] = {{"criteria", list}};
  return s;
}

std::string config_hash(const Config& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : cfg.canonical()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

Kernel kernel_from_config(const Config& cfg, const std::string& section) {
  const std::string name = cfg.str(section, "name");
  const double T = cfg.real(section, "T", 1.0);
  const std::string where = cfg.where(section, "name");
  auto orient = [&](Orientation fallback) {
    if (!cfg.has(section, "orientation")) return fallback;
    return cfg.str(section, "orientation") == "causal" ? Orientation::causal : Orientation::anticausal;
  };
  try {
    if (name == "zero") return make_zero(T, orient(Orientation::anticausal));
    if (name == "constant") return make_constant(cfg.real(section, "c", 1.0), T, orient(Orientation::anticausal));
    if (name == "fractional") {
      return make_fractional(cfg.real(section, "alpha"), orient(Orientation::anticausal), T,
                             cfg.real(section, "scale", 1.0));
    }
    if (name == "doubly_singular") return make_doubly_singular(cfg.real(section, "alpha"), cfg.real(section, "beta"), T);
    if (name == "fbm_rl") return make_fbm_rl(cfg.real(section, "H"), T);
    if (name == "fbm_full") return make_fbm_full(cfg.real(section, "H"), T);
    if (name == "exp_sum") {
      return make_exp_sum(cfg.reals(section, "weights"), cfg.reals(section, "rates"), T, orient(Orientation::causal));
    }
    if (name == "counterexample_sup") return make_counterexample_sup(T);
    if (name == "reverse_sqrt") {
      return make_convolution([T](double r) { return 1.0 / std::sqrt(T - r); }, false, T, Orientation::anticausal,
                              "reverse_sqrt");
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": kernel '" + name + "': " + e.what());
  }
  throw ConfigError(where + ": unknown kernel '" + name + "'");
}

Tree tree_from_config(const Config& cfg, int default_N) {
  const long long N = cfg.integer("tree", "N", default_N);
  const long long m = cfg.integer("tree", "m", 1);
  const double T = cfg.real("tree", "T", 1.0);
  if (N < 1 || m < 1 || !(T > 0.0)) throw ConfigError(cfg.where("tree", "N") + ": tree needs N >= 1, m >= 1, T > 0");
  try {
    return make_tree(static_cast<int>(N), T, static_cast<int>(m));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(cfg.where("tree", "N") + ": " + e.what());
  }
}

Params params_from_section(const Config& cfg, const std::string& section, const std::vector<std::string>& reserved) {
  Params p;
  if (!cfg.has(section)) return p;
  const std::set<std::string> skip(reserved.begin(), reserved.end());
  for (const auto& [key, e] : cfg.section(section).entries) {
    if (skip.count(key)) continue;
    p.set(key, cfg.real(section, key));
  }
  return p;
}

}  // namespace svie
