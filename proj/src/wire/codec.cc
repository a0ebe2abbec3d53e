#include <array>
#include <cstdint>
#include <string>

#include "ubcsim/error.h"
#include "ubcsim/wire.h"

namespace ubcsim {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 11> kKindNames = {
    "Register",          "RegisterAck",   "GetConfigSection",
    "ConfigSection",     "AddConfigObserver", "ConfigChanged",
    "ReportLoad",        "Command",       "CommandResult",
    "Error",             "Ack",
};

std::uint32_t ReadLength(std::string_view bytes) {
  return (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[0]))
          << 24) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[1]))
          << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[2]))
          << 8) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[3]));
}

WireMessage ParseEnvelope(std::string_view payload) {
  json j = json::parse(payload, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(ErrorCode::kProtocol, "frame is not a JSON object");
  }
  try {
    WireMessage m;
    m.msg_id = j.at("msg_id").get<std::uint64_t>();
    if (j.contains("in_reply_to")) {
      m.in_reply_to = j.at("in_reply_to").get<std::uint64_t>();
    }
    auto kind = ParseMessageKind(j.at("kind").get<std::string>());
    if (!kind) {
      throw Error(ErrorCode::kProtocol,
                  "unknown message kind " + j.at("kind").get<std::string>());
    }
    m.kind = *kind;
    m.body = j.at("body");
    if (!m.body.is_object()) {
      throw Error(ErrorCode::kProtocol, "message body is not an object");
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kProtocol, std::string("bad envelope: ") + e.what());
  }
}

template <typename F>
auto Guarded(const char* what, F f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kProtocol,
                std::string("bad ") + what + " body: " + e.what());
  }
}

}  // namespace

std::string_view MessageKindName(MessageKind kind) {
  return kKindNames.at(static_cast<std::size_t>(kind));
}

std::optional<MessageKind> ParseMessageKind(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == name) return static_cast<MessageKind>(i);
  }
  return std::nullopt;
}

std::string EncodeFrame(const WireMessage& message) {
  json j;
  j["msg_id"] = message.msg_id;
  if (message.in_reply_to) j["in_reply_to"] = *message.in_reply_to;
  j["kind"] = std::string(MessageKindName(message.kind));
  j["body"] = message.body;
  std::string payload = j.dump();
  if (payload.size() > kMaxFrameBytes) {
    throw Error(ErrorCode::kProtocol, "frame exceeds maximum size");
  }
  auto n = static_cast<std::uint32_t>(payload.size());
  std::string out;
  out.reserve(4 + payload.size());
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out += payload;
  return out;
}

WireMessage DecodeFrame(std::string_view frame) {
  if (frame.size() < 4) throw Error(ErrorCode::kProtocol, "short frame");
  std::uint32_t n = ReadLength(frame);
  if (frame.size() - 4 != n) {
    throw Error(ErrorCode::kProtocol, "frame length mismatch");
  }
  return ParseEnvelope(frame.substr(4));
}

void FrameDecoder::Feed(std::string_view bytes) { buffer_.append(bytes); }

std::optional<WireMessage> FrameDecoder::Next() {
  if (buffer_.size() < 4) return std::nullopt;
  std::uint32_t n = ReadLength(buffer_);
  if (n > kMaxFrameBytes) {
    throw Error(ErrorCode::kProtocol, "frame exceeds maximum size");
  }
  if (buffer_.size() < 4 + static_cast<std::size_t>(n)) return std::nullopt;
  std::string payload = buffer_.substr(4, n);
  buffer_.erase(0, 4 + static_cast<std::size_t>(n));
  return ParseEnvelope(payload);
}

json UbcTableToJson(const UbcTable& table) {
  json j = json::object();
  for (std::size_t i = 0; i < kUbcResourceCount; ++i) {
    auto r = static_cast<UbcResource>(i);
    const UbcParam& p = table[r];
    j[std::string(ResourceName(r))] = {{"held", p.held},
                                       {"maxheld", p.maxheld},
                                       {"barrier", p.barrier},
                                       {"limit", p.limit},
                                       {"failcnt", p.failcnt}};
  }
  return j;
}

UbcTable UbcTableFromJson(const json& j) {
  return Guarded("ubc", [&] {
    UbcTable table;
    for (const auto& [name, v] : j.items()) {
      auto r = ParseResource(name);
      if (!r) throw Error(ErrorCode::kProtocol, "unknown resource " + name);
      UbcParam& p = table[*r];
      p.held = v.at("held").get<std::uint64_t>();
      p.maxheld = v.at("maxheld").get<std::uint64_t>();
      p.barrier = v.at("barrier").get<std::uint64_t>();
      p.limit = v.at("limit").get<std::uint64_t>();
      p.failcnt = v.at("failcnt").get<std::uint64_t>();
    }
    return table;
  });
}

json ProfileToJson(const MemoryProfile& profile) {
  return {{"name", profile.name},
          {"oomguarpages_barrier", profile.oomguarpages_barrier},
          {"vmguarpages_barrier", profile.vmguarpages_barrier},
          {"privvmpages_barrier", profile.privvmpages_barrier},
          {"privvmpages_limit", profile.privvmpages_limit}};
}

MemoryProfile ProfileFromJson(const json& j) {
  return Guarded("profile", [&] {
    MemoryProfile p;
    p.name = j.at("name").get<std::string>();
    p.oomguarpages_barrier = j.at("oomguarpages_barrier").get<std::uint64_t>();
    p.vmguarpages_barrier = j.at("vmguarpages_barrier").get<std::uint64_t>();
    p.privvmpages_barrier = j.at("privvmpages_barrier").get<std::uint64_t>();
    p.privvmpages_limit = j.at("privvmpages_limit").get<std::uint64_t>();
    return p;
  });
}

json ObservationToJson(const LoadObservation& obs) {
  json containers = json::array();
  for (const ContainerSample& c : obs.containers) {
    containers.push_back({{"container_id", c.container_id},
                          {"replica_group", c.replica_group},
                          {"ubc", UbcTableToJson(c.ubc)}});
  }
  return {{"timestamp_ms", obs.timestamp_ms},
          {"node_id", obs.node_id},
          {"resident_used", obs.resident_used},
          {"swap_used", obs.swap_used},
          {"cpu_used", obs.cpu_used},
          {"containers", std::move(containers)}};
}

LoadObservation ObservationFromJson(const json& j) {
  return Guarded("observation", [&] {
    LoadObservation obs;
    obs.timestamp_ms = j.at("timestamp_ms").get<SimTimeMs>();
    obs.node_id = j.at("node_id").get<std::string>();
    obs.resident_used = j.at("resident_used").get<std::uint64_t>();
    obs.swap_used = j.at("swap_used").get<std::uint64_t>();
    obs.cpu_used = j.at("cpu_used").get<double>();
    for (const json& c : j.at("containers")) {
      ContainerSample s;
      s.container_id = c.at("container_id").get<std::string>();
      s.replica_group = c.at("replica_group").get<std::string>();
      s.ubc = UbcTableFromJson(c.at("ubc"));
      obs.containers.push_back(std::move(s));
    }
    return obs;
  });
}

json RequestToJson(const ActionRequest& request) {
  json j = {{"request_id", request.request_id},
            {"kind", std::string(ActionKindName(request.kind))},
            {"container_id", request.container_id},
            {"source", request.source},
            {"target", request.target},
            {"image_id", request.image_id}};
  if (request.profile) j["profile"] = ProfileToJson(*request.profile);
  return j;
}

ActionRequest RequestFromJson(const json& j) {
  return Guarded("command", [&] {
    ActionRequest r;
    r.request_id = j.at("request_id").get<std::uint64_t>();
    auto kind = ParseActionKind(j.at("kind").get<std::string>());
    if (!kind) throw Error(ErrorCode::kProtocol, "unknown action kind");
    r.kind = *kind;
    r.container_id = j.at("container_id").get<std::string>();
    r.source = j.at("source").get<std::string>();
    r.target = j.at("target").get<std::string>();
    r.image_id = j.at("image_id").get<std::string>();
    if (j.contains("profile")) r.profile = ProfileFromJson(j.at("profile"));
    return r;
  });
}

json ResultToJson(const CommandResult& result) {
  return {{"request_id", result.request_id},
          {"ok", result.ok},
          {"reason", result.reason}};
}

CommandResult ResultFromJson(const json& j) {
  return Guarded("result", [&] {
    CommandResult r;
    r.request_id = j.at("request_id").get<std::uint64_t>();
    r.ok = j.at("ok").get<bool>();
    r.reason = j.at("reason").get<std::string>();
    return r;
  });
}

json NodeToJson(const NodeDescriptor& node) {
  return {{"node_id", node.node_id},
          {"ram_pages", node.ram_pages},
          {"swap_pages", node.swap_pages}};
}

NodeDescriptor NodeFromJson(const json& j) {
  return Guarded("node", [&] {
    NodeDescriptor n;
    n.node_id = j.at("node_id").get<std::string>();
    n.ram_pages = j.at("ram_pages").get<std::uint64_t>();
    n.swap_pages = j.at("swap_pages").get<std::uint64_t>();
    return n;
  });
}

// Values travel in configuration-file syntax so their type survives.
json TreeToJson(const ConfigTree& tree) {
  json j = json::object();
  for (const auto& [path, section] : tree.sections()) {
    json s = json::object();
    for (const auto& [option, value] : section) s[option] = value.Format();
    j[path] = std::move(s);
  }
  return j;
}

ConfigTree TreeFromJson(const json& j) {
  return Guarded("config", [&] {
    ConfigTree tree;
    for (const auto& [path, section] : j.items()) {
      tree.MutableSection(path);
      for (const auto& [option, raw] : section.items()) {
        tree.Set(path, option, ConfigValue::Parse(raw.get<std::string>()));
      }
    }
    return tree;
  });
}

json ChangeToJson(const ConfigChange& change) {
  json j = {{"path", change.path},
            {"option", change.option},
            {"new_value", change.new_value.Format()}};
  j["old_value"] =
      change.old_value ? json(change.old_value->Format()) : json(nullptr);
  return j;
}

ConfigChange ChangeFromJson(const json& j) {
  return Guarded("change", [&] {
    ConfigChange c;
    c.path = j.at("path").get<std::string>();
    c.option = j.at("option").get<std::string>();
    c.new_value = ConfigValue::Parse(j.at("new_value").get<std::string>());
    if (!j.at("old_value").is_null()) {
      c.old_value = ConfigValue::Parse(j.at("old_value").get<std::string>());
    }
    return c;
  });
}

}  // namespace ubcsim
