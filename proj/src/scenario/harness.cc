#include <cmath>
#include <memory>

#include "ubcsim/error.h"
#include "ubcsim/policy.h"
#include "ubcsim/scenario.h"
#include "ubcsim/wire.h"

namespace ubcsim {

namespace {

// Agent samples land before a check due at the same instant.
constexpr int kSamplePriority = kControlPriority - 1;

const Credentials kAgentCredentials{"agent", "agent-secret"};

class SimDispatcher final : public CommandDispatcher {
 public:
  explicit SimDispatcher(Simulation& sim) : sim_(sim) {}
  void Dispatch(const ActionRequest& request, CommandCallback done) override {
    sim_.Execute(request, std::move(done));
  }

 private:
  Simulation& sim_;
};

SimTimeMs SecondsToMs(double s) {
  return std::max<SimTimeMs>(1, static_cast<SimTimeMs>(std::llround(s * 1000)));
}

// Control-side components shared by both modes.
struct ControlPlane {
  ControlPlane(const Scenario& sc, const ConfigTree& defaults)
      : config([&] {
          ConfigTree t = defaults;
          t.Merge(sc.config_overlay);
          return t;
        }()),
        loader(config, policies) {
    RegisterDefaultPolicies(policies);
    RegisterDefaultResolvers(resolvers);
  }

  ConfigManager config;
  PolicyRepository policies;
  ConfigPolicyStateLoader loader;
  ResolverRepository resolvers;
  NodeHierarchy hierarchy;
  ActionLog log;
};

}  // namespace

RunResult RunScenario(const Scenario& sc, const ConfigTree& defaults) {
  Simulation sim(sc.sim);
  ControlPlane cp(sc, defaults);
  SimDispatcher direct(sim);

  std::unique_ptr<ControlServer> server;
  std::vector<std::unique_ptr<NodeAgent>> agents;
  if (sc.mode == RunMode::kNetworked) {
    std::map<std::string, std::string> users{
        {kAgentCredentials.username, kAgentCredentials.password}};
    server = std::make_unique<ControlServer>(cp.config, cp.hierarchy, users);
  }
  CommandDispatcher& dispatcher =
      server ? static_cast<CommandDispatcher&>(*server) : direct;

  Actlater actlater(dispatcher);
  Monitor monitor(cp.config, cp.hierarchy, cp.policies, cp.resolvers,
                  actlater, dispatcher, sc.ladder, cp.log);
  monitor.SetClock([&sim] { return sim.now(); });

  std::uint64_t reports = 0;
  auto pump = [&] {
    if (!server) return;
    for (;;) {
      std::size_t moved = server->Poll(sim.now());
      for (auto& a : agents) moved += a->Poll();
      if (moved == 0) break;
    }
  };

  if (sc.manager_enabled) {
    std::function<void(std::string)> sample_loop;
    auto frequency_ms = [&](const std::string& node) {
      if (server) {
        for (auto& a : agents) {
          if (a->node().node_id == node) return SecondsToMs(a->frequency_s());
        }
      }
      auto v = cp.config.Get("client", "frequency");
      return SecondsToMs(v ? v->number() : 2.0);
    };
    sample_loop = [&](std::string node) {
      LoadObservation obs = sim.Sample(node);
      if (server) {
        for (auto& a : agents) {
          if (a->node().node_id == node && a->running()) a->ReportLoad(obs);
        }
      } else {
        cp.hierarchy.RecordObservation(obs);
        ++reports;
      }
      sim.Schedule(sim.now() + frequency_ms(node), kSamplePriority,
                   [&sample_loop, node] { sample_loop(node); });
    };

    for (const NodeSpec& n : sc.sim.nodes) {
      NodeDescriptor d{n.id, MibToPages(n.ram_mib), MibToPages(n.swap_mib)};
      if (!server) {
        cp.hierarchy.RegisterNode(d);
        sim.Schedule(0, kSamplePriority,
                     [&sample_loop, id = n.id] { sample_loop(id); });
        continue;
      }
      auto [agent_end, server_end] = MakeLoopbackPair();
      server->Accept(std::move(server_end));
      auto agent = std::make_unique<NodeAgent>(
          std::move(agent_end), kAgentCredentials, d,
          [&sim](const ActionRequest& r, CommandCallback done) {
            sim.Execute(r, std::move(done));
          });
      agent->OnRunning([&sim, &sample_loop, id = n.id] {
        sim.Schedule(sim.now(), kSamplePriority,
                     [&sample_loop, id] { sample_loop(id); });
      });
      agents.push_back(std::move(agent));
    }
    for (auto& a : agents) a->Start();
    pump();
    for (auto& a : agents) {
      if (!a->running()) {
        throw Error(ErrorCode::kProtocol, "agent for " + a->node().node_id +
                                              " failed: " + a->error());
      }
    }

    std::function<void()> check = [&] {
      monitor.RunDueCheck(sim.now());
      sim.Schedule(monitor.next_check_ms(), kControlPriority, check);
    };
    sim.Schedule(monitor.next_check_ms(), kControlPriority, check);

    sim.SetAfterEvent(pump);
    while (sim.Step()) {
      if (sim.WorkloadFinished() && !actlater.in_flight() &&
          actlater.queued() == 0) {
        break;
      }
    }
    sim.SetAfterEvent(nullptr);
  } else {
    while (sim.Step()) {
      if (sim.WorkloadFinished()) break;
    }
  }

  RunResult result;
  result.name = sc.name;
  result.summary = sim.Summary();
  result.log = cp.log;
  result.outcomes = sim.outcomes();
  result.trace = sim.trace();
  result.usage = sim.usage();
  result.check_times = monitor.check_times();
  result.reports = server ? server->reports() : reports;
  result.end_ms = sim.now();
  return result;
}

}  // namespace ubcsim
