#pragma once

// Flat key=value run configuration shared by every subcommand.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rnet::cli {

struct KeyInfo {
  std::string key;
  std::string default_value;
  std::string help;
};

/// Every accepted `section.key`, in display order.
const std::vector<KeyInfo>& schema();
bool is_known_key(const std::string& key);

class RunConfig {
 public:
  RunConfig();

  /// Reads `section.key = value` lines; `#` starts a comment. Unknown keys
  /// and malformed lines throw ConfigError naming the file and line.
  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  const std::string& str(const std::string& key) const;
  double real(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;
  std::vector<double> real_list(const std::string& key) const;
  std::vector<std::size_t> count_list(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace rnet::cli
