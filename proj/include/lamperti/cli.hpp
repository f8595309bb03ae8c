#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lamperti::cli {

inline constexpr const char* kToolName = "lamperti";
inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr const char* kOutputEnv = "LAMPERTI_OUTPUT_DIR";

enum ExitCode { kOk = 0, kComputeFailure = 1, kUsageError = 2 };

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Kind { Real, Integer, Text, Flag, RealList, IntegerList };

struct ParamSpec {
  std::string section;
  std::string key;
  std::string fallback;
  Kind kind;
  std::string help;
};

// Parameters of one subcommand; canonical text is "[section]\nkey = value\n" sorted.
class RunConfig {
 public:
  RunConfig(std::string subcommand, std::vector<ParamSpec> specs);

  // key=value text with [section] headers; '#' and ';' start comments.
  void load_text(const std::string& text);
  void set(const std::string& key, const std::string& value);  // bare key or section.key
  void validate() const;

  const std::string& subcommand() const { return subcommand_; }
  std::string canonical() const;
  std::string hash() const;  // sha256 of subcommand + canonical text

  double real(const std::string& key) const;
  long long integer(const std::string& key) const;
  std::string text(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;
  std::vector<long long> integers(const std::string& key) const;

  const std::vector<ParamSpec>& specs() const { return specs_; }

 private:
  const ParamSpec& find(const std::string& key) const;
  std::string subcommand_;
  std::vector<ParamSpec> specs_;
  std::map<std::string, std::string> values_;  // key -> value
};

std::vector<std::string> subcommands();
std::vector<ParamSpec> params_for(const std::string& subcommand);

// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lamperti::cli
