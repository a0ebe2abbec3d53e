#ifndef UBCSIM_CONFIG_H_
#define UBCSIM_CONFIG_H_

// Hierarchical configuration database. Files are INI-style: "[a/b/c]"
// section headers, "option=value" lines and full-line '#' or ';' comments.
// Values are integers, decimals, text, or map literals such as
// {'threshold':0.80,'foo':'bar'}.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace ubcsim {

using ScalarValue = std::variant<std::string, std::int64_t, double>;
using MapValue = std::map<std::string, ScalarValue>;

class ConfigValue {
 public:
  ConfigValue() = default;
  ConfigValue(std::string text) : v_(std::move(text)) {}
  ConfigValue(const char* text) : v_(std::string(text)) {}
  ConfigValue(std::int64_t n) : v_(n) {}
  ConfigValue(int n) : v_(static_cast<std::int64_t>(n)) {}
  ConfigValue(double d) : v_(d) {}
  ConfigValue(MapValue m) : v_(std::move(m)) {}
  ConfigValue(const ScalarValue& s);

  bool is_text() const { return std::holds_alternative<std::string>(v_); }
  bool is_int() const { return std::holds_alternative<std::int64_t>(v_); }
  bool is_decimal() const { return std::holds_alternative<double>(v_); }
  bool is_map() const { return std::holds_alternative<MapValue>(v_); }

  const std::string& text() const;
  std::int64_t integer() const;
  // Integers widen to double.
  double number() const;
  const MapValue& map() const;

  // Renders the value in file syntax; Parse(Format()) == *this.
  std::string Format() const;
  static ConfigValue Parse(std::string_view raw);

  bool operator==(const ConfigValue&) const = default;

 private:
  std::variant<std::string, std::int64_t, double, MapValue> v_;
};

double ScalarNumber(const ScalarValue& v);
std::string FormatScalar(const ScalarValue& v);

using ConfigSection = std::map<std::string, ConfigValue>;

class ConfigTree {
 public:
  // Section paths are normalized: no leading/trailing '/', "" is the root.
  static std::string NormalizePath(std::string_view path);

  bool HasSection(std::string_view path) const;
  const ConfigSection* FindSection(std::string_view path) const;
  ConfigSection& MutableSection(std::string_view path);

  // Exact-section lookup; never falls back to siblings or parents.
  std::optional<ConfigValue> Get(std::string_view path,
                                 std::string_view option) const;
  void Set(std::string_view path, std::string_view option, ConfigValue value);

  // Deep copy of |path| and all of its subsections. Throws kUnknownSection
  // when neither the section nor any descendant exists. "" copies the
  // whole tree.
  ConfigTree Subtree(std::string_view path) const;

  // Key-by-key override: options in |overlay| replace those here.
  void Merge(const ConfigTree& overlay);

  const std::map<std::string, ConfigSection>& sections() const {
    return sections_;
  }

  std::string Serialize() const;
  // Throws kParse with |source| and the line number on malformed input.
  static ConfigTree ParseText(std::string_view text,
                              const std::string& source = "<string>");

  bool operator==(const ConfigTree&) const = default;

 private:
  std::map<std::string, ConfigSection> sections_;
};

// Parses each file in order, later files overriding earlier ones. The
// first path is the packaged defaults and must exist; the rest are skipped
// when missing or unreadable.
ConfigTree LoadLayers(const std::vector<std::filesystem::path>& paths);

// Packaged defaults followed by the installation, system and user files.
std::vector<std::filesystem::path> StandardLayerPaths(
    const std::filesystem::path& defaults);

struct ConfigChange {
  std::string path;
  std::string option;
  std::optional<ConfigValue> old_value;
  ConfigValue new_value;
};

using ConfigObserver = std::function<void(const ConfigChange&)>;

// Run-time configuration database. Writes are committed one at a time and
// notify every subscription whose prefix covers the changed section, in
// commit order. Observers must not write back from inside a notification.
class ConfigManager {
 public:
  explicit ConfigManager(ConfigTree tree = {});

  ConfigTree Snapshot() const;
  ConfigTree GetSection(std::string_view path) const;
  std::optional<ConfigValue> Get(std::string_view path,
                                 std::string_view option) const;

  // Returns nullopt when the value is unchanged (nothing is notified).
  // Throws kImmutableOption for restart-only options.
  std::optional<ConfigChange> Set(std::string_view path,
                                  std::string_view option, ConfigValue value);

  // Applies every option of |overlay| through Set.
  std::vector<ConfigChange> ApplyLayer(const ConfigTree& overlay);

  // |prefix| "" observes everything.
  std::uint64_t Subscribe(std::string_view prefix, ConfigObserver observer);
  void Unsubscribe(std::uint64_t id);

  static bool IsRestartOnly(std::string_view path, std::string_view option);
  static bool PrefixCovers(std::string_view prefix, std::string_view path);

 private:
  struct Subscription {
    std::string prefix;
    ConfigObserver observer;
  };

  mutable std::mutex tree_mu_;
  std::mutex commit_mu_;
  ConfigTree tree_;
  std::map<std::uint64_t, Subscription> subscriptions_;
  std::uint64_t next_subscription_ = 1;
};

}  // namespace ubcsim

#endif  // UBCSIM_CONFIG_H_
