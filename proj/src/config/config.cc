#include "ubcsim/config.h"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ubcsim/error.h"

namespace ubcsim {
namespace {

std::string_view Trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

std::optional<std::int64_t> ParseInt(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::string_view digits = s;
  if (digits.front() == '+') digits.remove_prefix(1);
  std::int64_t out = 0;
  auto [ptr, ec] =
      std::from_chars(digits.data(), digits.data() + digits.size(), out);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) {
    return std::nullopt;
  }
  return out;
}

std::optional<double> ParseDecimal(std::string_view s) {
  if (s.find_first_of(".eE") == std::string_view::npos) return std::nullopt;
  if (s.find_first_of("0123456789") == std::string_view::npos) {
    return std::nullopt;
  }
  std::string_view body = s;
  if (!body.empty() && body.front() == '+') body.remove_prefix(1);
  double out = 0;
  auto [ptr, ec] =
      std::from_chars(body.data(), body.data() + body.size(), out);
  if (ec != std::errc() || ptr != body.data() + body.size()) {
    return std::nullopt;
  }
  return out;
}

bool IsQuoted(std::string_view s) {
  return s.size() >= 2 && (s.front() == '\'' || s.front() == '"') &&
         s.back() == s.front();
}

ScalarValue ParseScalar(std::string_view raw) {
  raw = Trim(raw);
  if (IsQuoted(raw)) return std::string(raw.substr(1, raw.size() - 2));
  if (auto n = ParseInt(raw)) return *n;
  if (auto d = ParseDecimal(raw)) return *d;
  return std::string(raw);
}

std::string FormatDecimal(double d) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), d);
  std::string out(buf, ptr);
  if (out.find_first_of(".eEn") == std::string::npos) out += ".0";
  return out;
}

std::string Quote(std::string_view s) {
  char q = s.find('\'') == std::string_view::npos ? '\'' : '"';
  return q + std::string(s) + q;
}

// Splits a map literal body on commas that are not inside quotes.
std::vector<std::string_view> SplitEntries(std::string_view body) {
  std::vector<std::string_view> out;
  char quote = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < body.size(); ++i) {
    char c = body[i];
    if (quote) {
      if (c == quote) quote = 0;
    } else if (c == '\'' || c == '"') {
      quote = c;
    } else if (c == ',') {
      out.push_back(body.substr(start, i - start));
      start = i + 1;
    }
  }
  if (quote) throw Error(ErrorCode::kParse, "unterminated quote in map");
  out.push_back(body.substr(start));
  return out;
}

std::size_t FindColonOutsideQuotes(std::string_view entry) {
  char quote = 0;
  for (std::size_t i = 0; i < entry.size(); ++i) {
    char c = entry[i];
    if (quote) {
      if (c == quote) quote = 0;
    } else if (c == '\'' || c == '"') {
      quote = c;
    } else if (c == ':') {
      return i;
    }
  }
  return std::string_view::npos;
}

MapValue ParseMap(std::string_view raw) {
  std::string_view body = Trim(raw.substr(1, raw.size() - 2));
  MapValue out;
  if (body.empty()) return out;
  for (std::string_view entry : SplitEntries(body)) {
    entry = Trim(entry);
    std::size_t colon = FindColonOutsideQuotes(entry);
    if (colon == std::string_view::npos) {
      throw Error(ErrorCode::kParse,
                  "map entry without ':' in " + std::string(raw));
    }
    std::string_view key = Trim(entry.substr(0, colon));
    if (IsQuoted(key)) key = key.substr(1, key.size() - 2);
    if (key.empty()) {
      throw Error(ErrorCode::kParse, "empty map key in " + std::string(raw));
    }
    out[std::string(key)] = ParseScalar(entry.substr(colon + 1));
  }
  return out;
}

}  // namespace

ConfigValue::ConfigValue(const ScalarValue& s) {
  std::visit([this](const auto& v) { v_ = v; }, s);
}

const std::string& ConfigValue::text() const {
  if (const auto* s = std::get_if<std::string>(&v_)) return *s;
  throw Error(ErrorCode::kInvalidArgument, "config value is not text");
}

std::int64_t ConfigValue::integer() const {
  if (const auto* n = std::get_if<std::int64_t>(&v_)) return *n;
  throw Error(ErrorCode::kInvalidArgument, "config value is not an integer");
}

double ConfigValue::number() const {
  if (const auto* n = std::get_if<std::int64_t>(&v_)) {
    return static_cast<double>(*n);
  }
  if (const auto* d = std::get_if<double>(&v_)) return *d;
  throw Error(ErrorCode::kInvalidArgument, "config value is not numeric");
}

const MapValue& ConfigValue::map() const {
  if (const auto* m = std::get_if<MapValue>(&v_)) return *m;
  throw Error(ErrorCode::kInvalidArgument, "config value is not a map");
}

double ScalarNumber(const ScalarValue& v) {
  if (const auto* n = std::get_if<std::int64_t>(&v)) {
    return static_cast<double>(*n);
  }
  if (const auto* d = std::get_if<double>(&v)) return *d;
  throw Error(ErrorCode::kInvalidArgument, "map value is not numeric");
}

std::string FormatScalar(const ScalarValue& v) {
  if (const auto* n = std::get_if<std::int64_t>(&v)) return std::to_string(*n);
  if (const auto* d = std::get_if<double>(&v)) return FormatDecimal(*d);
  return Quote(std::get<std::string>(v));
}

std::string ConfigValue::Format() const {
  if (const auto* m = std::get_if<MapValue>(&v_)) {
    std::string out = "{";
    bool first = true;
    for (const auto& [k, v] : *m) {
      if (!first) out += ',';
      first = false;
      out += Quote(k) + ':' + FormatScalar(v);
    }
    return out + '}';
  }
  if (const auto* s = std::get_if<std::string>(&v_)) {
    try {
      if (Parse(*s) == *this) return *s;
    } catch (const Error&) {
    }
    return Quote(*s);
  }
  if (const auto* n = std::get_if<std::int64_t>(&v_)) return std::to_string(*n);
  return FormatDecimal(std::get<double>(v_));
}

ConfigValue ConfigValue::Parse(std::string_view raw) {
  raw = Trim(raw);
  if (!raw.empty() && raw.front() == '{') {
    if (raw.back() != '}') {
      throw Error(ErrorCode::kParse,
                  "unterminated map literal " + std::string(raw));
    }
    return ConfigValue(ParseMap(raw));
  }
  return ConfigValue(ParseScalar(raw));
}

std::string ConfigTree::NormalizePath(std::string_view path) {
  path = Trim(path);
  while (!path.empty() && path.front() == '/') path.remove_prefix(1);
  while (!path.empty() && path.back() == '/') path.remove_suffix(1);
  return std::string(path);
}

bool ConfigTree::HasSection(std::string_view path) const {
  return sections_.count(NormalizePath(path)) != 0;
}

const ConfigSection* ConfigTree::FindSection(std::string_view path) const {
  auto it = sections_.find(NormalizePath(path));
  return it == sections_.end() ? nullptr : &it->second;
}

ConfigSection& ConfigTree::MutableSection(std::string_view path) {
  return sections_[NormalizePath(path)];
}

std::optional<ConfigValue> ConfigTree::Get(std::string_view path,
                                           std::string_view option) const {
  const ConfigSection* section = FindSection(path);
  if (section == nullptr) return std::nullopt;
  auto it = section->find(std::string(option));
  if (it == section->end()) return std::nullopt;
  return it->second;
}

void ConfigTree::Set(std::string_view path, std::string_view option,
                     ConfigValue value) {
  MutableSection(path)[std::string(option)] = std::move(value);
}

ConfigTree ConfigTree::Subtree(std::string_view path) const {
  const std::string p = NormalizePath(path);
  if (p.empty()) return *this;
  ConfigTree out;
  const std::string child_prefix = p + "/";
  for (const auto& [name, section] : sections_) {
    if (name == p || name.compare(0, child_prefix.size(), child_prefix) == 0) {
      out.sections_[name] = section;
    }
  }
  if (out.sections_.empty()) {
    throw Error(ErrorCode::kUnknownSection, "no section '" + p + "'");
  }
  return out;
}

void ConfigTree::Merge(const ConfigTree& overlay) {
  for (const auto& [name, section] : overlay.sections_) {
    ConfigSection& target = sections_[name];
    for (const auto& [option, value] : section) target[option] = value;
  }
}

std::string ConfigTree::Serialize() const {
  std::ostringstream os;
  bool first = true;
  for (const auto& [name, section] : sections_) {
    if (!first) os << '\n';
    first = false;
    os << '[' << name << "]\n";
    for (const auto& [option, value] : section) {
      os << option << '=' << value.Format() << '\n';
    }
  }
  return os.str();
}

ConfigTree ConfigTree::ParseText(std::string_view text,
                                 const std::string& source) {
  ConfigTree tree;
  std::optional<std::string> current;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = Trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    auto fail = [&](const std::string& what) {
      std::ostringstream os;
      os << source << ':' << line_no << ": " << what;
      throw Error(ErrorCode::kParse, os.str());
    };
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      current = NormalizePath(line.substr(1, line.size() - 2));
      tree.sections_[*current];
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected option=value");
    if (!current) fail("option outside of any section");
    std::string_view option = Trim(line.substr(0, eq));
    if (option.empty()) fail("empty option name");
    try {
      tree.sections_[*current][std::string(option)] =
          ConfigValue::Parse(line.substr(eq + 1));
    } catch (const Error& e) {
      fail(e.what());
    }
  }
  return tree;
}

ConfigTree LoadLayers(const std::vector<std::filesystem::path>& paths) {
  ConfigTree tree;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    std::ifstream in(paths[i]);
    if (!in) {
      if (i == 0) {
        throw Error(ErrorCode::kIo,
                    "cannot read defaults " + paths[i].string());
      }
      continue;
    }
    std::stringstream buf;
    buf << in.rdbuf();
    tree.Merge(ConfigTree::ParseText(buf.str(), paths[i].string()));
  }
  return tree;
}

std::vector<std::filesystem::path> StandardLayerPaths(
    const std::filesystem::path& defaults) {
  std::vector<std::filesystem::path> paths = {
      defaults, "server/ubcsim-server.conf", "/etc/ubcsim-server.conf"};
  if (const char* home = std::getenv("HOME")) {
    paths.push_back(std::filesystem::path(home) / ".ubcsim-server.conf");
  }
  return paths;
}

ConfigManager::ConfigManager(ConfigTree tree) : tree_(std::move(tree)) {}

ConfigTree ConfigManager::Snapshot() const {
  std::lock_guard<std::mutex> lock(tree_mu_);
  return tree_;
}

ConfigTree ConfigManager::GetSection(std::string_view path) const {
  std::lock_guard<std::mutex> lock(tree_mu_);
  return tree_.Subtree(path);
}

std::optional<ConfigValue> ConfigManager::Get(std::string_view path,
                                              std::string_view option) const {
  std::lock_guard<std::mutex> lock(tree_mu_);
  return tree_.Get(path, option);
}

bool ConfigManager::IsRestartOnly(std::string_view path,
                                  std::string_view option) {
  return ConfigTree::NormalizePath(path) == "server/policy" &&
         option == "state_loader";
}

bool ConfigManager::PrefixCovers(std::string_view prefix,
                                 std::string_view path) {
  const std::string p = ConfigTree::NormalizePath(prefix);
  const std::string s = ConfigTree::NormalizePath(path);
  if (p.empty() || s == p) return true;
  return s.size() > p.size() && s.compare(0, p.size(), p) == 0 &&
         s[p.size()] == '/';
}

std::optional<ConfigChange> ConfigManager::Set(std::string_view path,
                                               std::string_view option,
                                               ConfigValue value) {
  if (IsRestartOnly(path, option)) {
    throw Error(ErrorCode::kImmutableOption,
                std::string(option) + " requires a restart");
  }
  std::lock_guard<std::mutex> commit(commit_mu_);
  ConfigChange change;
  change.path = ConfigTree::NormalizePath(path);
  change.option = std::string(option);
  change.new_value = value;
  std::vector<ConfigObserver> targets;
  {
    std::lock_guard<std::mutex> lock(tree_mu_);
    change.old_value = tree_.Get(change.path, option);
    if (change.old_value && *change.old_value == value) return std::nullopt;
    tree_.Set(change.path, option, std::move(value));
    for (const auto& [id, sub] : subscriptions_) {
      if (PrefixCovers(sub.prefix, change.path)) {
        targets.push_back(sub.observer);
      }
    }
  }
  for (const auto& observer : targets) observer(change);
  return change;
}

std::vector<ConfigChange> ConfigManager::ApplyLayer(const ConfigTree& overlay) {
  std::vector<ConfigChange> changes;
  for (const auto& [path, section] : overlay.sections()) {
    for (const auto& [option, value] : section) {
      if (auto c = Set(path, option, value)) changes.push_back(std::move(*c));
    }
  }
  return changes;
}

std::uint64_t ConfigManager::Subscribe(std::string_view prefix,
                                       ConfigObserver observer) {
  std::lock_guard<std::mutex> lock(tree_mu_);
  std::uint64_t id = next_subscription_++;
  subscriptions_[id] = {ConfigTree::NormalizePath(prefix), std::move(observer)};
  return id;
}

void ConfigManager::Unsubscribe(std::uint64_t id) {
  std::lock_guard<std::mutex> lock(tree_mu_);
  subscriptions_.erase(id);
}

}  // namespace ubcsim
