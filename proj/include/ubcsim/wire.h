#ifndef UBCSIM_WIRE_H_
#define UBCSIM_WIRE_H_

// Client/server control protocol. Every message is a 4-byte big-endian
// length followed by a compact JSON envelope:
//   {"body":{...},"in_reply_to":N,"kind":"ReportLoad","msg_id":N}
// "in_reply_to" is omitted on unsolicited messages. Agents number their
// messages with odd ids, the server with even ids.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubcsim/config.h"
#include "ubcsim/control.h"
#include "ubcsim/observation.h"

namespace ubcsim {

inline constexpr int kDefaultServerPort = 8888;
inline constexpr std::size_t kMaxFrameBytes = 16u << 20;

enum class MessageKind {
  kRegister,
  kRegisterAck,
  kGetConfigSection,
  kConfigSection,
  kAddConfigObserver,
  kConfigChanged,
  kReportLoad,
  kCommand,
  kCommandResult,
  kError,
  kAck,
};

std::string_view MessageKindName(MessageKind kind);
std::optional<MessageKind> ParseMessageKind(std::string_view name);

struct WireMessage {
  std::uint64_t msg_id = 0;
  std::optional<std::uint64_t> in_reply_to;
  MessageKind kind = MessageKind::kAck;
  nlohmann::json body = nlohmann::json::object();

  bool operator==(const WireMessage&) const = default;
};

std::string EncodeFrame(const WireMessage& message);
// Decodes exactly one frame. Throws kProtocol on malformed input.
WireMessage DecodeFrame(std::string_view frame);

// Reassembles frames from an arbitrary split of the byte stream.
class FrameDecoder {
 public:
  void Feed(std::string_view bytes);
  // Throws kProtocol on a malformed or oversized frame.
  std::optional<WireMessage> Next();
  std::size_t buffered() const { return buffer_.size(); }

 private:
  std::string buffer_;
};

// Body codecs.
nlohmann::json UbcTableToJson(const UbcTable& table);
UbcTable UbcTableFromJson(const nlohmann::json& j);
nlohmann::json ProfileToJson(const MemoryProfile& profile);
MemoryProfile ProfileFromJson(const nlohmann::json& j);
nlohmann::json ObservationToJson(const LoadObservation& obs);
LoadObservation ObservationFromJson(const nlohmann::json& j);
nlohmann::json RequestToJson(const ActionRequest& request);
ActionRequest RequestFromJson(const nlohmann::json& j);
nlohmann::json ResultToJson(const CommandResult& result);
CommandResult ResultFromJson(const nlohmann::json& j);
nlohmann::json NodeToJson(const NodeDescriptor& node);
NodeDescriptor NodeFromJson(const nlohmann::json& j);
nlohmann::json TreeToJson(const ConfigTree& tree);
ConfigTree TreeFromJson(const nlohmann::json& j);
nlohmann::json ChangeToJson(const ConfigChange& change);
ConfigChange ChangeFromJson(const nlohmann::json& j);

// One endpoint of a message stream.
class Connection {
 public:
  virtual ~Connection() = default;
  virtual void Send(const WireMessage& message) = 0;
  // Non-blocking; nullopt when nothing complete has arrived.
  virtual std::optional<WireMessage> Receive() = 0;
  virtual void Close() = 0;
  virtual bool closed() const = 0;
};

// In-process byte pipe pair. Messages are encoded to bytes on Send and
// decoded on Receive, so the full codec is exercised.
std::pair<std::unique_ptr<Connection>, std::unique_ptr<Connection>>
MakeLoopbackPair();

// Frames over a stream socket or pipe; owns |fd|.
class FdConnection final : public Connection {
 public:
  explicit FdConnection(int fd);
  ~FdConnection() override;
  FdConnection(const FdConnection&) = delete;
  FdConnection& operator=(const FdConnection&) = delete;

  void Send(const WireMessage& message) override;
  std::optional<WireMessage> Receive() override;
  // Blocks up to |timeout_ms| for a complete message.
  std::optional<WireMessage> ReceiveWait(int timeout_ms);
  void Close() override;
  bool closed() const override { return fd_ < 0; }

 private:
  bool ReadAvailable(int timeout_ms);

  int fd_;
  FrameDecoder decoder_;
};

struct Credentials {
  std::string username;
  std::string password;
};

using CommandExecutor =
    std::function<void(const ActionRequest&, CommandCallback)>;

// Node-side endpoint: registers, fetches and observes the "client"
// configuration section, then reports load and executes commands.
class NodeAgent {
 public:
  enum class State {
    kIdle,
    kRegistering,
    kFetchingConfig,
    kSubscribing,
    kRunning,
    kFailed,
  };

  NodeAgent(std::unique_ptr<Connection> connection, Credentials credentials,
            NodeDescriptor node, CommandExecutor executor);

  void Start();
  // Handles every message that has arrived; returns how many.
  std::size_t Poll();

  State state() const { return state_; }
  bool running() const { return state_ == State::kRunning; }
  const std::string& error() const { return error_; }
  const NodeDescriptor& node() const { return node_; }
  ConfigManager& config() { return config_; }
  // Seconds between load reports, from the client section.
  double frequency_s() const;
  const std::vector<ConfigChange>& received_changes() const {
    return received_changes_;
  }
  std::uint64_t acks() const { return acks_; }

  void ReportLoad(const LoadObservation& obs);

  // Called once when the agent enters kRunning.
  void OnRunning(std::function<void()> callback) {
    on_running_ = std::move(callback);
  }
  void OnConfigChanged(std::function<void(const ConfigChange&)> callback) {
    on_change_ = std::move(callback);
  }

 private:
  std::uint64_t Send(MessageKind kind, nlohmann::json body,
                     std::optional<std::uint64_t> in_reply_to = {});
  void Handle(const WireMessage& message);
  void Fail(const std::string& why);

  std::unique_ptr<Connection> connection_;
  Credentials credentials_;
  NodeDescriptor node_;
  CommandExecutor executor_;
  ConfigManager config_;
  State state_ = State::kIdle;
  std::string error_;
  std::uint64_t next_id_ = 1;
  std::uint64_t pending_ = 0;
  std::uint64_t acks_ = 0;
  std::vector<ConfigChange> received_changes_;
  std::function<void()> on_running_;
  std::function<void(const ConfigChange&)> on_change_;
  std::shared_ptr<bool> alive_ = std::make_shared<bool>(true);
};

// Server-side endpoint: authenticates agents, serves configuration,
// forwards load reports into the hierarchy and delivers commands.
class ControlServer final : public CommandDispatcher {
 public:
  ControlServer(ConfigManager& config, NodeHierarchy& hierarchy,
                std::map<std::string, std::string> users);
  ~ControlServer() override;
  ControlServer(const ControlServer&) = delete;
  ControlServer& operator=(const ControlServer&) = delete;

  void Accept(std::unique_ptr<Connection> connection);
  // Handles every message that has arrived; returns how many.
  std::size_t Poll(SimTimeMs now);

  // Sends a Command to the node that must execute it: the target for
  // replication, the source otherwise.
  void Dispatch(const ActionRequest& request, CommandCallback done) override;

  bool IsRegistered(const std::string& node_id) const;
  std::size_t sessions() const { return sessions_.size(); }
  std::uint64_t reports() const { return reports_; }

 private:
  struct Session {
    std::unique_ptr<Connection> connection;
    std::string node_id;
    std::vector<std::uint64_t> subscriptions;
    std::uint64_t next_id = 2;
    // Outstanding commands by message id: request id and completion.
    std::map<std::uint64_t, std::pair<std::uint64_t, CommandCallback>>
        pending;
  };

  void Handle(Session& session, const WireMessage& message, SimTimeMs now);
  void Reply(Session& session, const WireMessage& request, MessageKind kind,
             nlohmann::json body);
  void SendError(Session& session, const WireMessage& request,
                 ErrorCode code, const std::string& message);
  std::uint64_t SendTo(Session& session, MessageKind kind,
                       nlohmann::json body,
                       std::optional<std::uint64_t> in_reply_to);
  void Drop(Session& session);

  ConfigManager& config_;
  NodeHierarchy& hierarchy_;
  std::map<std::string, std::string> users_;
  std::vector<std::unique_ptr<Session>> sessions_;
  std::uint64_t reports_ = 0;
};

}  // namespace ubcsim

#endif  // UBCSIM_WIRE_H_
