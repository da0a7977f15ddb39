#pragma once

#include "svie/kernels.hpp"
#include "svie/lattice.hpp"
#include "svie/registry.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace svie {

/// Carries "source:line: message" so rejected configs point at the offending line.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigEntry {
  std::string value;
  int line = 0;
};

struct ConfigSection {
  int line = 0;
  std::map<std::string, ConfigEntry> entries;
};

/// Structured text: `[section]` headers, `key = value` lines, `#` or `;`
/// comments. Lists are comma separated.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& source = "<config>");
  static Config load(const std::string& path);

  bool has(const std::string& section) const;
  bool has(const std::string& section, const std::string& key) const;
  const ConfigSection& section(const std::string& name) const;
  const std::map<std::string, ConfigSection>& sections() const { return sections_; }

  std::string str(const std::string& section, const std::string& key,
                  const std::optional<std::string>& fallback = std::nullopt) const;
  double real(const std::string& section, const std::string& key, std::optional<double> fallback = std::nullopt) const;
  long long integer(const std::string& section, const std::string& key,
                    std::optional<long long> fallback = std::nullopt) const;
  bool boolean(const std::string& section, const std::string& key, std::optional<bool> fallback = std::nullopt) const;
  std::vector<double> reals(const std::string& section, const std::string& key,
                            const std::optional<std::vector<double>>& fallback = std::nullopt) const;

  /// Sets or overrides a value (used for command-line flags); line 0 marks it.
  void set(const std::string& section, const std::string& key, const std::string& value);
  void erase(const std::string& section, const std::string& key);

  /// Sections and keys in sorted order, one `section.key=value` per line.
  std::string canonical() const;
  const std::string& source() const { return source_; }

  std::string where(const std::string& section, const std::string& key) const;

 private:
  std::string source_ = "<config>";
  std::map<std::string, ConfigSection> sections_;
};

enum class FieldType { string, real, integer, boolean, real_list, choice };

struct FieldSpec {
  FieldType type = FieldType::real;
  bool required = false;
  std::vector<std::string> choices;
};

/// Per section: named fields, plus "*" for free numeric parameters.
struct Schema {
  std::map<std::string, std::map<std::string, FieldSpec>> sections;
};

/// Throws ConfigError at the first unknown section or key, missing required
/// key, or value that does not parse as its declared type.
void validate(const Config& cfg, const Schema& schema);

/// Sections run, tree, kernel, forward, backward, control, suite.
Schema experiment_schema();

/// FNV-1a 64 of the canonical text, as 16 hex digits.
std::string config_hash(const Config& cfg);

/// The [kernel] block: name and its parameters.
Kernel kernel_from_config(const Config& cfg, const std::string& section = "kernel");
std::vector<std::string> kernel_names();

/// N, T, m from [tree]; d is left at 1.
Tree tree_from_config(const Config& cfg, int default_N = 8);

/// Numeric keys of a section not named in `reserved`.
Params params_from_section(const Config& cfg, const std::string& section, const std::vector<std::string>& reserved);

}  // namespace svie
