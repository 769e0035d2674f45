#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace erg::runner {

inline constexpr const char* kVersion = "0.1.0";

inline constexpr int kExitPass = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitInvalidInput = 2;

/// Bad configuration or command line; maps to exit code 2.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Commands accepted by run_command, in CLI order (report included).
const std::vector<std::string>& command_names();
/// Keys of a command, including the global `seed` and `out`.
const std::vector<ConfigKey>& config_keys(const std::string& command);

/// Flat key=value text: one pair per line, `#` starts a comment, blank lines ignored.
std::map<std::string, std::string> parse_config_text(std::istream& is);

/// Resolved configuration: defaults, then the config file, then overrides.
class Config {
 public:
  Config() = default;
  Config(std::string command, std::map<std::string, std::string> values);

  const std::string& command() const { return command_; }
  const std::map<std::string, std::string>& values() const { return values_; }
  const std::string& text(const std::string& key) const;
  double number(const std::string& key) const;
  int integer(const std::string& key) const;
  std::uint64_t unsigned64(const std::string& key) const;
  /// Empty when the value is `auto`.
  std::optional<double> optional_number(const std::string& key) const;

 private:
  std::string command_;
  std::map<std::string, std::string> values_;
};

/// Throws InvalidInput on unknown commands or keys and on unreadable config files.
Config resolve_config(const std::string& command, const std::optional<std::filesystem::path>& config_file,
                      const std::map<std::string, std::string>& overrides);

/// FNV-1a hash of a stream name.
std::uint64_t fnv1a(const std::string& s);
/// Seed for a named stream: derive_seed(seed, fnv1a(name)).
std::uint64_t named_seed(std::uint64_t seed, const std::string& name);

/// `reference`/`tolerance` semantics by kind: abs |value - reference| <= tolerance; rel the same
/// relative to |reference|; max value <= tolerance; zscore |value| <= tolerance.
struct Check {
  std::string name;
  double value = 0.0;
  double reference = 0.0;
  double tolerance = 0.0;
  std::string kind = "abs";
  bool pass = false;
};

Check make_check(std::string name, double value, double reference, double tolerance, std::string kind);

struct RunResult {
  std::vector<Check> checks;
  std::vector<std::string> artifacts;
};

/// Runs a command, writes <out>/<command>.manifest.json and returns the exit code. Messages go to
/// `log`. The report command takes its directory from the `dir` key.
int run_command(const std::string& command, const std::optional<std::filesystem::path>& config_file,
                const std::map<std::string, std::string>& overrides, std::ostream& log);

RunResult cmd_decompose(const Config& c, const std::filesystem::path& out);
RunResult cmd_sample(const Config& c, const std::filesystem::path& out);
RunResult cmd_rgcheck(const Config& c, const std::filesystem::path& out);
RunResult cmd_flow(const Config& c, const std::filesystem::path& out);
RunResult cmd_fixedpoint(const Config& c, const std::filesystem::path& out);
RunResult cmd_polymer(const Config& c, const std::filesystem::path& out);

/// Reads every *.manifest.json in `dir` and writes <dir>/summary.csv with one row per check.
/// Throws InvalidInput when no manifest is present; returns 1 when any check failed.
int cmd_report(const std::filesystem::path& dir, std::ostream& log);

/// Help text listing the keys and defaults of a command.
std::string help_text(const std::string& command);

}  // namespace erg::runner
