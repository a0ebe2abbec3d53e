#include <string>

#include "ubcsim/error.h"
#include "ubcsim/wire.h"

namespace ubcsim {

using nlohmann::json;

namespace {

constexpr std::string_view kClientSection = "client";

}  // namespace

NodeAgent::NodeAgent(std::unique_ptr<Connection> connection,
                     Credentials credentials, NodeDescriptor node,
                     CommandExecutor executor)
    : connection_(std::move(connection)),
      credentials_(std::move(credentials)),
      node_(std::move(node)),
      executor_(std::move(executor)) {}

double NodeAgent::frequency_s() const {
  auto v = config_.Get(kClientSection, "frequency");
  return v ? v->number() : 2.0;
}

std::uint64_t NodeAgent::Send(MessageKind kind, json body,
                              std::optional<std::uint64_t> in_reply_to) {
  WireMessage m;
  m.msg_id = next_id_;
  next_id_ += 2;
  m.in_reply_to = in_reply_to;
  m.kind = kind;
  m.body = std::move(body);
  connection_->Send(m);
  return m.msg_id;
}

void NodeAgent::Start() {
  if (state_ != State::kIdle) {
    throw Error(ErrorCode::kInvalidArgument, "agent already started");
  }
  state_ = State::kRegistering;
  pending_ = Send(MessageKind::kRegister,
                  {{"username", credentials_.username},
                   {"password", credentials_.password},
                   {"node", NodeToJson(node_)}});
}

std::size_t NodeAgent::Poll() {
  std::size_t handled = 0;
  while (!connection_->closed()) {
    auto m = connection_->Receive();
    if (!m) break;
    ++handled;
    Handle(*m);
  }
  return handled;
}

void NodeAgent::Fail(const std::string& why) {
  state_ = State::kFailed;
  error_ = why;
  connection_->Close();
}

void NodeAgent::Handle(const WireMessage& m) {
  const bool reply = m.in_reply_to && *m.in_reply_to == pending_;
  switch (m.kind) {
    case MessageKind::kError: {
      std::string why = m.body.value("code", std::string("Error")) + ": " +
                        m.body.value("message", std::string());
      if (state_ != State::kRunning) {
        Fail(why);
      } else {
        error_ = why;
      }
      return;
    }
    case MessageKind::kRegisterAck:
      if (state_ == State::kRegistering && reply) {
        state_ = State::kFetchingConfig;
        pending_ = Send(MessageKind::kGetConfigSection,
                        {{"path", std::string(kClientSection)}});
      }
      return;
    case MessageKind::kConfigSection:
      if (state_ == State::kFetchingConfig && reply) {
        config_.ApplyLayer(TreeFromJson(m.body.at("sections")));
        state_ = State::kSubscribing;
        pending_ = Send(MessageKind::kAddConfigObserver,
                        {{"path", std::string(kClientSection)}});
      }
      return;
    case MessageKind::kAck:
      if (state_ == State::kSubscribing && reply) {
        state_ = State::kRunning;
        pending_ = 0;
        if (on_running_) on_running_();
      } else if (state_ == State::kRunning) {
        ++acks_;
      }
      return;
    case MessageKind::kConfigChanged: {
      ConfigChange change = ChangeFromJson(m.body);
      config_.Set(change.path, change.option, change.new_value);
      received_changes_.push_back(change);
      if (on_change_) on_change_(change);
      return;
    }
    case MessageKind::kCommand: {
      ActionRequest request = RequestFromJson(m.body);
      std::uint64_t reply_to = m.msg_id;
      std::weak_ptr<bool> alive = alive_;
      executor_(request, [this, alive, reply_to](const CommandResult& r) {
        if (alive.expired() || connection_->closed()) return;
        Send(MessageKind::kCommandResult, ResultToJson(r), reply_to);
      });
      return;
    }
    default:
      throw Error(ErrorCode::kProtocol,
                  "agent cannot handle " +
                      std::string(MessageKindName(m.kind)));
  }
}

void NodeAgent::ReportLoad(const LoadObservation& obs) {
  if (state_ != State::kRunning) {
    throw Error(ErrorCode::kNotRegistered, "agent is not running");
  }
  Send(MessageKind::kReportLoad, {{"observation", ObservationToJson(obs)}});
}

}  // namespace ubcsim
