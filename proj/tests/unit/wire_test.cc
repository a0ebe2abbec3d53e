#include <gtest/gtest.h>

#include <sys/socket.h>

#include <memory>
#include <vector>

#include "support/properties.h"
#include "ubcsim/error.h"
#include "ubcsim/wire.h"

namespace ubcsim {
namespace {

using nlohmann::json;

MemoryProfile P64() { return MemoryProfile::FromMib("64MiB", 60, 64, 64, 66); }

std::string Header(std::uint32_t n) {
  std::string h(4, '\0');
  h[0] = static_cast<char>((n >> 24) & 0xff);
  h[1] = static_cast<char>((n >> 16) & 0xff);
  h[2] = static_cast<char>((n >> 8) & 0xff);
  h[3] = static_cast<char>(n & 0xff);
  return h;
}

TEST(FrameTest, LayoutIsLengthPrefixedSortedJson) {
  WireMessage m;
  m.msg_id = 3;
  m.in_reply_to = 2;
  m.kind = MessageKind::kReportLoad;
  m.body = {{"z", 1}, {"a", "x"}};
  const std::string payload =
      R"({"body":{"a":"x","z":1},"in_reply_to":2,"kind":"ReportLoad","msg_id":3})";
  EXPECT_EQ(EncodeFrame(m), Header(payload.size()) + payload);
  m.in_reply_to.reset();
  const std::string bare = R"({"body":{"a":"x","z":1},"kind":"ReportLoad","msg_id":3})";
  EXPECT_EQ(EncodeFrame(m), Header(bare.size()) + bare);
}

TEST(FrameTest, KindNamesRoundTrip) {
  for (int i = 0; i <= 10; ++i) {
    const auto k = static_cast<MessageKind>(i);
    EXPECT_EQ(ParseMessageKind(MessageKindName(k)), k);
  }
  EXPECT_FALSE(ParseMessageKind("Bogus").has_value());
}

TEST(FrameTest, RandomMessagesRoundTripByteExact) {
  EXPECT_EQ(testing::CheckFrameRoundTrips(1000, 17), "");
}

void ExpectProtocolError(const std::string& frame) {
  try {
    DecodeFrame(frame);
    FAIL() << "accepted malformed frame";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProtocol);
  }
}

TEST(FrameTest, MalformedFramesRejected) {
  ExpectProtocolError("");
  ExpectProtocolError(Header(10) + "{}");
  ExpectProtocolError(Header(3) + "abc");
  const std::string no_kind = R"({"body":{},"msg_id":1})";
  ExpectProtocolError(Header(no_kind.size()) + no_kind);
  const std::string bad_kind = R"({"body":{},"kind":"Nope","msg_id":1})";
  ExpectProtocolError(Header(bad_kind.size()) + bad_kind);
  const std::string arr = "[1,2]";
  ExpectProtocolError(Header(arr.size()) + arr);
}

TEST(FrameTest, OversizedFrameRejectedByDecoder) {
  FrameDecoder d;
  d.Feed(Header(static_cast<std::uint32_t>(kMaxFrameBytes + 1)));
  EXPECT_THROW(d.Next(), Error);
}

TEST(FrameTest, DecoderWaitsForCompleteFrame) {
  WireMessage m;
  m.msg_id = 1;
  m.kind = MessageKind::kAck;
  const std::string f = EncodeFrame(m);
  FrameDecoder d;
  for (std::size_t i = 0; i + 1 < f.size(); ++i) {
    d.Feed(f.substr(i, 1));
    EXPECT_FALSE(d.Next().has_value());
  }
  d.Feed(f.substr(f.size() - 1));
  EXPECT_EQ(d.Next(), m);
  EXPECT_EQ(d.buffered(), 0u);
}

TEST(BodyCodecTest, ObservationRoundTrip) {
  LoadObservation o;
  o.timestamp_ms = 1234;
  o.node_id = "hn1";
  o.resident_used = 77;
  o.swap_used = 5;
  o.cpu_used = 0.25;
  UbcTable t;
  ApplyProfile(t, P64());
  t[UbcResource::kPrivVmPages].held = 99;
  t[UbcResource::kPrivVmPages].failcnt = 3;
  o.containers = {{"web", t, "g"}};
  EXPECT_EQ(ObservationFromJson(ObservationToJson(o)), o);
  EXPECT_EQ(UbcTableFromJson(UbcTableToJson(UbcTable{})), UbcTable{});
}

TEST(BodyCodecTest, RequestResultNodeProfile) {
  ActionRequest r;
  r.request_id = 5;
  r.kind = ActionKind::kMigrate;
  r.container_id = "web";
  r.source = "hn1";
  r.target = "hn2";
  r.profile = P64();
  EXPECT_EQ(RequestFromJson(RequestToJson(r)), r);
  r.profile.reset();
  EXPECT_EQ(RequestFromJson(RequestToJson(r)), r);
  const CommandResult c{5, false, "x"};
  EXPECT_EQ(ResultFromJson(ResultToJson(c)), c);
  const NodeDescriptor n{"hn1", 10, 20};
  EXPECT_EQ(NodeFromJson(NodeToJson(n)), n);
  EXPECT_EQ(ProfileFromJson(ProfileToJson(P64())), P64());
}

TEST(BodyCodecTest, ConfigTreeAndChange) {
  ConfigTree t;
  t.Set("client", "frequency", 2);
  t.Set("server/policy/state", "overload-mem-default",
        MapValue{{"threshold", 0.8}});
  EXPECT_EQ(TreeFromJson(TreeToJson(t)), t);
  ConfigChange c{"client", "frequency", ConfigValue(2), ConfigValue(5)};
  const ConfigChange back = ChangeFromJson(ChangeToJson(c));
  EXPECT_EQ(back.path, c.path);
  EXPECT_EQ(back.option, c.option);
  EXPECT_EQ(back.old_value, c.old_value);
  EXPECT_EQ(back.new_value, c.new_value);
  c.old_value.reset();
  EXPECT_FALSE(ChangeFromJson(ChangeToJson(c)).old_value.has_value());
}

TEST(TransportTest, LoopbackDeliversInOrder) {
  auto [a, b] = MakeLoopbackPair();
  for (std::uint64_t i = 1; i <= 5; ++i) {
    WireMessage m;
    m.msg_id = i;
    a->Send(m);
  }
  for (std::uint64_t i = 1; i <= 5; ++i) EXPECT_EQ(b->Receive()->msg_id, i);
  EXPECT_FALSE(b->Receive().has_value());
  WireMessage last;
  last.msg_id = 9;
  a->Send(last);
  a->Close();
  EXPECT_FALSE(b->closed());
  EXPECT_EQ(b->Receive()->msg_id, 9u);
  EXPECT_TRUE(b->closed());
  EXPECT_THROW(a->Send(last), Error);
}

TEST(TransportTest, SocketPairCarriesFrames) {
  int fds[2];
  ASSERT_EQ(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds), 0);
  FdConnection a(fds[0]);
  FdConnection b(fds[1]);
  testing::JsonGenerator gen(5);
  std::vector<WireMessage> sent;
  for (int i = 0; i < 50; ++i) {
    sent.push_back(testing::RandomMessage(gen));
    a.Send(sent.back());
  }
  for (const WireMessage& m : sent) {
    auto got = b.ReceiveWait(1000);
    ASSERT_TRUE(got.has_value());
    EXPECT_EQ(*got, m);
  }
  EXPECT_FALSE(b.Receive().has_value());
  a.Close();
  EXPECT_FALSE(b.ReceiveWait(100).has_value());
  EXPECT_TRUE(b.closed());
}

// A server plus agents joined by loopback pipes.
struct WireFixture {
  WireFixture() {
    defaults.Set("client", "frequency", 2);
    defaults.Set("server/policy/overload", "check_interval", 12);
    config = std::make_unique<ConfigManager>(defaults);
    server = std::make_unique<ControlServer>(
        *config, hierarchy,
        std::map<std::string, std::string>{{"agent", "agent-secret"}});
  }

  NodeAgent& AddAgent(const std::string& node, const std::string& password,
                      CommandExecutor exec = nullptr) {
    auto [client, srv] = MakeLoopbackPair();
    server->Accept(std::move(srv));
    if (!exec) {
      exec = [this](const ActionRequest& r, CommandCallback done) {
        executed.push_back(r);
        done(CommandResult{r.request_id, true, ""});
      };
    }
    agents.push_back(std::make_unique<NodeAgent>(
        std::move(client), Credentials{"agent", password},
        NodeDescriptor{node, 1000, 500}, std::move(exec)));
    agents.back()->Start();
    Pump();
    return *agents.back();
  }

  void Pump() {
    for (int i = 0; i < 100; ++i) {
      std::size_t n = server->Poll(now);
      for (auto& a : agents) n += a->Poll();
      if (n == 0) return;
    }
  }

  ConfigTree defaults;
  std::unique_ptr<ConfigManager> config;
  NodeHierarchy hierarchy;
  std::unique_ptr<ControlServer> server;
  std::vector<std::unique_ptr<NodeAgent>> agents;
  std::vector<ActionRequest> executed;
  SimTimeMs now = 0;
};

TEST(HandshakeTest, AgentRegistersFetchesAndSubscribes) {
  WireFixture f;
  NodeAgent& a = f.AddAgent("hn1", "agent-secret");
  EXPECT_TRUE(a.running());
  EXPECT_TRUE(f.server->IsRegistered("hn1"));
  EXPECT_TRUE(f.hierarchy.HasNode("hn1"));
  EXPECT_EQ(f.hierarchy.FindNode("hn1")->descriptor().ram_pages, 1000u);
  EXPECT_EQ(a.frequency_s(), 2.0);
  EXPECT_FALSE(a.config().Get("server/policy/overload", "check_interval"));
}

TEST(HandshakeTest, BadPasswordFailsAndCloses) {
  WireFixture f;
  NodeAgent& a = f.AddAgent("hn1", "wrong");
  EXPECT_EQ(a.state(), NodeAgent::State::kFailed);
  EXPECT_EQ(a.error().rfind("AuthFailed", 0), 0u) << a.error();
  EXPECT_FALSE(f.server->IsRegistered("hn1"));
  EXPECT_THROW(a.ReportLoad(LoadObservation{}), Error);
}

TEST(HandshakeTest, DuplicateNodeRejected) {
  WireFixture f;
  f.AddAgent("hn1", "agent-secret");
  NodeAgent& dup = f.AddAgent("hn1", "agent-secret");
  EXPECT_EQ(dup.state(), NodeAgent::State::kFailed);
  EXPECT_EQ(dup.error().rfind("DuplicateNode", 0), 0u) << dup.error();
  EXPECT_TRUE(f.agents[0]->running());
}

TEST(HandshakeTest, UnregisteredRequestsRejected) {
  WireFixture f;
  auto [client, srv] = MakeLoopbackPair();
  f.server->Accept(std::move(srv));
  WireMessage m;
  m.msg_id = 1;
  m.kind = MessageKind::kGetConfigSection;
  m.body = {{"path", "client"}};
  client->Send(m);
  f.server->Poll(0);
  auto reply = client->Receive();
  ASSERT_TRUE(reply.has_value());
  EXPECT_EQ(reply->kind, MessageKind::kError);
  EXPECT_EQ(reply->in_reply_to, 1u);
  EXPECT_EQ(reply->body.at("code"), "NotRegistered");
}

TEST(HandshakeTest, UnknownSectionReportsError) {
  WireFixture f;
  f.AddAgent("hn1", "agent-secret");
  auto [client, srv] = MakeLoopbackPair();
  f.server->Accept(std::move(srv));
  WireMessage reg;
  reg.msg_id = 1;
  reg.kind = MessageKind::kRegister;
  reg.body = {{"username", "agent"},
              {"password", "agent-secret"},
              {"node", NodeToJson({"hn2", 1, 1})}};
  client->Send(reg);
  WireMessage get;
  get.msg_id = 3;
  get.kind = MessageKind::kGetConfigSection;
  get.body = {{"path", "nosuch"}};
  client->Send(get);
  f.server->Poll(0);
  EXPECT_EQ(client->Receive()->kind, MessageKind::kRegisterAck);
  auto err = client->Receive();
  EXPECT_EQ(err->kind, MessageKind::kError);
  EXPECT_EQ(err->body.at("code"), "UnknownSection");
}

TEST(ReportTest, LoadReportsGrowTheRing) {
  WireFixture f;
  NodeAgent& a = f.AddAgent("hn1", "agent-secret");
  for (int i = 1; i <= 3; ++i) {
    LoadObservation o;
    o.node_id = "hn1";
    o.timestamp_ms = i * 2000;
    o.containers = {{"web", UbcTable{}, ""}};
    a.ReportLoad(o);
    f.Pump();
  }
  EXPECT_EQ(f.server->reports(), 3u);
  EXPECT_EQ(a.acks(), 3u);
  EXPECT_EQ(f.hierarchy.FindNode("hn1")->history().size(), 3u);
  EXPECT_EQ(f.hierarchy.FindContainer("web")->history().size(), 3u);
}

TEST(ReportTest, ReportForAnotherNodeRejected) {
  WireFixture f;
  NodeAgent& a = f.AddAgent("hn1", "agent-secret");
  LoadObservation o;
  o.node_id = "hn9";
  a.ReportLoad(o);
  f.Pump();
  EXPECT_EQ(f.server->reports(), 0u);
  EXPECT_EQ(a.error().rfind("ProtocolError", 0), 0u) << a.error();
  EXPECT_TRUE(a.running());
}

TEST(ConfigPushTest, ChangesReachEverySubscribedAgentOnce) {
  WireFixture f;
  NodeAgent& a = f.AddAgent("hn1", "agent-secret");
  NodeAgent& b = f.AddAgent("hn2", "agent-secret");
  f.config->Set("client", "frequency", 5);
  f.config->Set("server/policy/overload", "check_interval", 4);
  f.Pump();
  for (NodeAgent* agent : {&a, &b}) {
    ASSERT_EQ(agent->received_changes().size(), 1u);
    EXPECT_EQ(agent->received_changes()[0].option, "frequency");
    EXPECT_EQ(agent->frequency_s(), 5.0);
  }
}

TEST(CommandTest, RoutedToSourceAndPairedWithReply) {
  WireFixture f;
  f.AddAgent("hn1", "agent-secret");
  f.AddAgent("hn2", "agent-secret");
  std::vector<CommandResult> results;
  ActionRequest r;
  r.request_id = 42;
  r.kind = ActionKind::kAdjustUbc;
  r.container_id = "web";
  r.source = "hn2";
  r.profile = P64();
  f.server->Dispatch(r, [&](const CommandResult& c) { results.push_back(c); });
  f.Pump();
  ASSERT_EQ(f.executed.size(), 1u);
  EXPECT_EQ(f.executed[0], r);
  ASSERT_EQ(results.size(), 1u);
  EXPECT_EQ(results[0].request_id, 42u);
  EXPECT_TRUE(results[0].ok);
}

TEST(CommandTest, ReplicationGoesToTarget) {
  WireFixture f;
  std::vector<std::string> ran_on;
  auto exec_on = [&](const std::string& node) {
    return [&, node](const ActionRequest& r, CommandCallback done) {
      ran_on.push_back(node);
      done(CommandResult{r.request_id, true, ""});
    };
  };
  f.AddAgent("hn1", "agent-secret", exec_on("hn1"));
  f.AddAgent("hn2", "agent-secret", exec_on("hn2"));
  ActionRequest r;
  r.kind = ActionKind::kReplicate;
  r.container_id = "web";
  r.source = "hn1";
  r.target = "hn2";
  f.server->Dispatch(r, [](const CommandResult&) {});
  f.Pump();
  EXPECT_EQ(ran_on, std::vector<std::string>{"hn2"});
}

TEST(CommandTest, DisconnectedNodeFailsImmediately) {
  WireFixture f;
  std::optional<CommandResult> got;
  ActionRequest r;
  r.request_id = 7;
  r.source = "ghost";
  f.server->Dispatch(r, [&](const CommandResult& c) { got = c; });
  ASSERT_TRUE(got.has_value());
  EXPECT_FALSE(got->ok);
  EXPECT_EQ(got->request_id, 7u);
}

TEST(CommandTest, DelayedRepliesMatchTheirCommands) {
  WireFixture f;
  std::vector<std::pair<ActionRequest, CommandCallback>> held;
  f.AddAgent("hn1", "agent-secret",
             [&](const ActionRequest& r, CommandCallback done) {
               held.push_back({r, std::move(done)});
             });
  std::map<std::uint64_t, std::uint64_t> answered;
  for (std::uint64_t id = 1; id <= 3; ++id) {
    ActionRequest r;
    r.request_id = id;
    r.source = "hn1";
    f.server->Dispatch(r, [&, id](const CommandResult& c) {
      answered[id] = c.request_id;
    });
  }
  f.Pump();
  ASSERT_EQ(held.size(), 3u);
  for (int i = 2; i >= 0; --i) {
    held[i].second(CommandResult{held[i].first.request_id, true, ""});
    f.Pump();
  }
  EXPECT_EQ(answered, (std::map<std::uint64_t, std::uint64_t>{{1, 1}, {2, 2}, {3, 3}}));
}

TEST(IdParityTest, AgentOddServerEven) {
  auto [client, srv] = MakeLoopbackPair();
  ConfigTree tree;
  tree.Set("client", "frequency", 2);
  ConfigManager config(tree);
  NodeHierarchy hierarchy;
  ControlServer server(config, hierarchy, {{"agent", "agent-secret"}});
  // Tap both directions by relaying through a second pair.
  auto [agent_end, tap_a] = MakeLoopbackPair();
  NodeAgent agent(std::move(agent_end), {"agent", "agent-secret"},
                  {"hn1", 1, 1}, [](const ActionRequest&, CommandCallback) {});
  server.Accept(std::move(srv));
  agent.Start();
  std::vector<WireMessage> from_agent, from_server;
  for (int i = 0; i < 50; ++i) {
    while (auto m = tap_a->Receive()) {
      from_agent.push_back(*m);
      client->Send(*m);
    }
    server.Poll(0);
    while (auto m = client->Receive()) {
      from_server.push_back(*m);
      tap_a->Send(*m);
    }
    agent.Poll();
  }
  ASSERT_TRUE(agent.running());
  ASSERT_EQ(from_agent.size(), 3u);
  ASSERT_EQ(from_server.size(), 3u);
  for (const auto& m : from_agent) EXPECT_EQ(m.msg_id % 2, 1u);
  for (const auto& m : from_server) EXPECT_EQ(m.msg_id % 2, 0u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(from_server[i].in_reply_to, from_agent[i].msg_id);
  }
}

TEST(DropTest, MalformedInputDropsSessionAndFailsPendingCommands) {
  ConfigManager config;
  NodeHierarchy hierarchy;
  ControlServer server(config, hierarchy, {{"agent", "agent-secret"}});
  int fds[2];
  ASSERT_EQ(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds), 0);
  server.Accept(std::make_unique<FdConnection>(fds[1]));
  FdConnection peer(fds[0]);
  WireMessage reg;
  reg.msg_id = 1;
  reg.kind = MessageKind::kRegister;
  reg.body = {{"username", "agent"},
              {"password", "agent-secret"},
              {"node", NodeToJson({"hn1", 1, 1})}};
  peer.Send(reg);
  for (int i = 0; i < 50 && !server.IsRegistered("hn1"); ++i) server.Poll(0);
  ASSERT_TRUE(server.IsRegistered("hn1"));
  std::optional<CommandResult> got;
  ActionRequest r;
  r.request_id = 11;
  r.source = "hn1";
  server.Dispatch(r, [&](const CommandResult& c) { got = c; });
  EXPECT_FALSE(got.has_value());
  const std::string garbage = Header(3) + "abc";
  ASSERT_EQ(::send(fds[0], garbage.data(), garbage.size(), 0),
            static_cast<ssize_t>(garbage.size()));
  for (int i = 0; i < 50 && !got; ++i) server.Poll(0);
  ASSERT_TRUE(got.has_value());
  EXPECT_FALSE(got->ok);
  EXPECT_EQ(got->request_id, 11u);
  EXPECT_EQ(got->reason, "connection closed");
  EXPECT_FALSE(server.IsRegistered("hn1"));
}

}  // namespace
}  // namespace ubcsim
