#include <algorithm>
#include <string>

#include "ubcsim/error.h"
#include "ubcsim/wire.h"

namespace ubcsim {

using nlohmann::json;

ControlServer::ControlServer(ConfigManager& config, NodeHierarchy& hierarchy,
                             std::map<std::string, std::string> users)
    : config_(config), hierarchy_(hierarchy), users_(std::move(users)) {}

ControlServer::~ControlServer() {
  for (auto& s : sessions_) {
    for (std::uint64_t id : s->subscriptions) config_.Unsubscribe(id);
  }
}

void ControlServer::Accept(std::unique_ptr<Connection> connection) {
  auto s = std::make_unique<Session>();
  s->connection = std::move(connection);
  sessions_.push_back(std::move(s));
}

bool ControlServer::IsRegistered(const std::string& node_id) const {
  return std::any_of(sessions_.begin(), sessions_.end(), [&](const auto& s) {
    return s->node_id == node_id && !s->connection->closed();
  });
}

std::uint64_t ControlServer::SendTo(Session& session, MessageKind kind,
                                    json body,
                                    std::optional<std::uint64_t> in_reply_to) {
  WireMessage m;
  m.msg_id = session.next_id;
  session.next_id += 2;
  m.in_reply_to = in_reply_to;
  m.kind = kind;
  m.body = std::move(body);
  session.connection->Send(m);
  return m.msg_id;
}

void ControlServer::Reply(Session& session, const WireMessage& request,
                          MessageKind kind, json body) {
  SendTo(session, kind, std::move(body), request.msg_id);
}

void ControlServer::SendError(Session& session, const WireMessage& request,
                              ErrorCode code, const std::string& message) {
  Reply(session, request, MessageKind::kError,
        {{"code", std::string(ErrorCodeName(code))}, {"message", message}});
}

void ControlServer::Drop(Session& session) {
  for (std::uint64_t id : session.subscriptions) config_.Unsubscribe(id);
  session.subscriptions.clear();
  auto pending = std::move(session.pending);
  session.pending.clear();
  for (auto& [id, entry] : pending) {
    entry.second(CommandResult{entry.first, false, "connection closed"});
  }
  session.node_id.clear();
  session.connection->Close();
}

std::size_t ControlServer::Poll(SimTimeMs now) {
  std::size_t handled = 0;
  for (std::size_t i = 0; i < sessions_.size(); ++i) {
    Session& s = *sessions_[i];
    while (!s.connection->closed()) {
      std::optional<WireMessage> m;
      try {
        m = s.connection->Receive();
      } catch (const Error&) {
        Drop(s);
        break;
      }
      if (!m) break;
      ++handled;
      Handle(s, *m, now);
    }
  }
  return handled;
}

void ControlServer::Handle(Session& s, const WireMessage& m, SimTimeMs now) {
  try {
    switch (m.kind) {
      case MessageKind::kRegister: {
        auto user = users_.find(m.body.value("username", std::string()));
        if (user == users_.end() ||
            user->second != m.body.value("password", std::string())) {
          SendError(s, m, ErrorCode::kAuthFailed, "bad username or password");
          Drop(s);
          return;
        }
        NodeDescriptor node = NodeFromJson(m.body.at("node"));
        if (!s.node_id.empty()) {
          SendError(s, m, ErrorCode::kProtocol, "session already registered");
          return;
        }
        if (IsRegistered(node.node_id)) {
          SendError(s, m, ErrorCode::kDuplicateNode,
                    "node " + node.node_id + " already registered");
          return;
        }
        hierarchy_.RegisterNode(node);
        s.node_id = node.node_id;
        Reply(s, m, MessageKind::kRegisterAck, {{"node_id", node.node_id}});
        return;
      }
      case MessageKind::kCommandResult: {
        CommandResult r = ResultFromJson(m.body);
        if (!m.in_reply_to) return;
        auto it = s.pending.find(*m.in_reply_to);
        if (it == s.pending.end()) return;
        CommandCallback done = std::move(it->second.second);
        s.pending.erase(it);
        done(r);
        return;
      }
      default:
        break;
    }
    if (s.node_id.empty()) {
      SendError(s, m, ErrorCode::kNotRegistered, "register first");
      return;
    }
    switch (m.kind) {
      case MessageKind::kGetConfigSection: {
        std::string path = m.body.at("path").get<std::string>();
        ConfigTree tree;
        try {
          tree = config_.GetSection(path);
        } catch (const Error& e) {
          SendError(s, m, e.code(), e.what());
          return;
        }
        Reply(s, m, MessageKind::kConfigSection,
              {{"path", path}, {"sections", TreeToJson(tree)}});
        return;
      }
      case MessageKind::kAddConfigObserver: {
        std::string path = m.body.at("path").get<std::string>();
        Session* target = &s;
        s.subscriptions.push_back(
            config_.Subscribe(path, [this, target](const ConfigChange& c) {
              if (target->connection->closed()) return;
              SendTo(*target, MessageKind::kConfigChanged, ChangeToJson(c),
                     std::nullopt);
            }));
        Reply(s, m, MessageKind::kAck, {{"path", path}});
        return;
      }
      case MessageKind::kReportLoad: {
        LoadObservation obs = ObservationFromJson(m.body.at("observation"));
        if (obs.node_id != s.node_id) {
          SendError(s, m, ErrorCode::kProtocol,
                    "report for " + obs.node_id + " on session of " +
                        s.node_id);
          return;
        }
        hierarchy_.RecordObservation(obs);
        ++reports_;
        Reply(s, m, MessageKind::kAck, {{"received_ms", now}});
        return;
      }
      default:
        SendError(s, m, ErrorCode::kProtocol,
                  "server cannot handle " +
                      std::string(MessageKindName(m.kind)));
        return;
    }
  } catch (const json::exception& e) {
    SendError(s, m, ErrorCode::kProtocol, e.what());
  } catch (const Error& e) {
    if (s.connection->closed()) return;
    SendError(s, m, e.code(), e.what());
  }
}

void ControlServer::Dispatch(const ActionRequest& request,
                             CommandCallback done) {
  const std::string& node = request.kind == ActionKind::kReplicate
                                ? request.target
                                : request.source;
  for (auto& s : sessions_) {
    if (s->node_id != node || s->connection->closed()) continue;
    std::uint64_t id = SendTo(*s, MessageKind::kCommand,
                              RequestToJson(request), std::nullopt);
    s->pending.emplace(id, std::make_pair(request.request_id, std::move(done)));
    return;
  }
  done(CommandResult{request.request_id, false,
                     "node " + node + " is not connected"});
}

}  // namespace ubcsim
