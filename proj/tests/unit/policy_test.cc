#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "support/oracles.h"
#include "ubcsim/error.h"
#include "ubcsim/policy.h"

namespace ubcsim {
namespace {

MemoryProfile P64() { return MemoryProfile::FromMib("64MiB", 60, 64, 64, 66); }
MemoryProfile P128() {
  return MemoryProfile::FromMib("128MiB", 100, 128, 128, 132);
}
MemoryProfile P256() {
  return MemoryProfile::FromMib("256MiB", 200, 256, 256, 264);
}

ContainerObservation Obs(const std::string& id, const UbcTable& t) {
  ContainerObservation o;
  o.container_id = id;
  o.ubc = t;
  return o;
}

UbcTable Table(const MemoryProfile& p) {
  UbcTable t;
  ApplyProfile(t, p);
  return t;
}

PolicyState Threshold(double v) { return PolicyState{{"threshold", v}}; }

// Builds the same observation pair for the implementation and the oracle.
struct ScoreCase {
  ContainerObservation prev, curr;
  testing::ScoreOracleInput oracle;
};

ScoreCase RandomScoreCase(std::mt19937_64& rng) {
  auto u = [&](std::uint64_t lo, std::uint64_t hi) {
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
  };
  ScoreCase c;
  UbcTable prev, curr;
  auto& o = c.oracle;
  o.oom_fail_prev = u(0, 3);
  o.oom_fail_curr = u(0, 3);
  o.privvm_fail_prev = u(0, 3);
  o.privvm_fail_curr = u(0, 3);
  o.oomguar_barrier = u(1, 40000);
  o.oomguar_held = u(0, 40000);
  o.kmem_bytes = u(0, 8 << 20);
  o.privvm_barrier = u(1, 40000);
  o.privvm_held = u(0, 45000);
  prev[UbcResource::kOomGuarPages].failcnt = o.oom_fail_prev;
  prev[UbcResource::kPrivVmPages].failcnt = o.privvm_fail_prev;
  curr[UbcResource::kOomGuarPages].failcnt = o.oom_fail_curr;
  curr[UbcResource::kPrivVmPages].failcnt = o.privvm_fail_curr;
  curr[UbcResource::kOomGuarPages].barrier = o.oomguar_barrier;
  curr[UbcResource::kOomGuarPages].held = o.oomguar_held;
  curr[UbcResource::kKmemSize].held = o.kmem_bytes;
  curr[UbcResource::kPrivVmPages].barrier = o.privvm_barrier;
  curr[UbcResource::kPrivVmPages].held = o.privvm_held;
  for (UbcResource r : kBufferResources) {
    const std::uint64_t b = u(0, 1 << 20);
    curr[r].held = b;
    o.buffer_bytes.push_back(b);
  }
  c.prev = Obs("ve", prev);
  c.curr = Obs("ve", curr);
  return c;
}

TEST(MemScoreTest, MatchesOracleOnRandomObservations) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; ++i) {
    const ScoreCase c = RandomScoreCase(rng);
    const StressScore s = MemScore(c.prev, c.curr);
    ASSERT_NEAR(s.overall, testing::ScoreOracle(c.oracle), 1e-12);
    double max = 0.0;
    for (const auto& comp : s.components) {
      ASSERT_GE(comp.normalized, 0.0);
      ASSERT_LE(comp.normalized, 1.0);
      max = std::max(max, comp.normalized);
    }
    ASSERT_EQ(s.overall, max);
  }
}

TEST(MemScoreTest, DecreasedFailCountScoresZero) {
  UbcTable prev = Table(P64()), curr = Table(P64());
  prev[UbcResource::kPrivVmPages].failcnt = 5;
  curr[UbcResource::kPrivVmPages].failcnt = 2;
  const StressScore s = MemScore(Obs("a", prev), Obs("a", curr));
  EXPECT_EQ(s.components[1].normalized, 0.0);
}

TEST(MemScoreTest, AnyFailCountIncreaseSaturates) {
  UbcTable prev = Table(P64()), curr = Table(P64());
  curr[UbcResource::kOomGuarPages].failcnt = 1;
  const StressScore s = MemScore(Obs("a", prev), Obs("a", curr));
  EXPECT_EQ(s.components[0].normalized, 1.0);
  EXPECT_EQ(s.overall, 1.0);
}

TEST(MemScoreTest, RatiosClampAtOne) {
  UbcTable t = Table(P64());
  t[UbcResource::kPrivVmPages].held = 16896;
  const StressScore s = MemScore(Obs("a", t), Obs("a", t));
  EXPECT_GT(s.components[3].raw, 1.0);
  EXPECT_EQ(s.components[3].normalized, 1.0);
}

TEST(MemScoreTest, ZeroOrUnlimitedBarrierThrows) {
  UbcTable t = Table(P64());
  t[UbcResource::kOomGuarPages].barrier = 0;
  try {
    MemScore(Obs("a", t), Obs("a", t));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBarrierZero);
  }
  UbcTable u = Table(P64());
  u[UbcResource::kPrivVmPages].barrier = kUnlimited;
  EXPECT_THROW(MemScore(Obs("a", u), Obs("a", u)), Error);
}

TEST(MemScoreTest, MismatchedContainersRejected) {
  const UbcTable t = Table(P64());
  EXPECT_THROW(MemScore(Obs("a", t), Obs("b", t)), Error);
}

TEST(MemOverloadCheckTest, ThresholdIsStrict) {
  StressScore s;
  s.overall = 0.80;
  EXPECT_EQ(MemOverloadCheck(s, Threshold(0.80)), Verdict::kNotStressed);
  s.overall = 0.8000001;
  EXPECT_EQ(MemOverloadCheck(s, Threshold(0.80)), Verdict::kStressed);
}

TEST(MemOverloadCheckTest, MissingThresholdThrows) {
  StressScore s;
  try {
    MemOverloadCheck(s, PolicyState{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingThreshold);
  }
}

TEST(MemOverloadCheckTest, IntegerThresholdAccepted) {
  StressScore s;
  s.overall = 1.0;
  EXPECT_EQ(MemOverloadCheck(s, PolicyState{{"threshold", std::int64_t{1}}}),
            Verdict::kNotStressed);
}

double ArOracle(const std::vector<double>& x) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    num += x[i - 1] * x[i];
    den += x[i - 1] * x[i - 1];
  }
  const double a = (x.size() < 2 || den == 0.0) ? 1.0 : num / den;
  return a * x.back();
}

TEST(CpuCheckTest, PredictionMatchesLeastSquaresOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> x(1 + rng() % 20);
    for (double& v : x) v = d(rng);
    ASSERT_NEAR(PredictNextUtilization(x), ArOracle(x), 1e-12);
  }
}

TEST(CpuCheckTest, DegenerateWindowsUseUnitCoefficient) {
  const std::vector<double> one = {0.4};
  EXPECT_DOUBLE_EQ(PredictNextUtilization(one), 0.4);
  const std::vector<double> zeros = {0.0, 0.0, 0.0};
  EXPECT_DOUBLE_EQ(PredictNextUtilization(zeros), 0.0);
  EXPECT_THROW(PredictNextUtilization(std::vector<double>{}), Error);
}

TEST(CpuCheckTest, StressedWhenPredictedIdleBelowThreshold) {
  const std::vector<double> steady = {0.95, 0.95, 0.95};
  EXPECT_EQ(CpuOverloadCheck(steady, Threshold(0.10)), Verdict::kStressed);
  const std::vector<double> light = {0.5, 0.5, 0.5};
  EXPECT_EQ(CpuOverloadCheck(light, Threshold(0.10)), Verdict::kNotStressed);
  const std::vector<double> exact = {0.9, 0.9};
  EXPECT_EQ(CpuOverloadCheck(exact, Threshold(1.0 - 0.9)),
            Verdict::kNotStressed);
}

TEST(ClusterViewTest, CommittedAndUncommitted) {
  ClusterView v;
  v.nodes = {{"hn1", 1000, 500, 0, false}};
  UbcTable t;
  t[UbcResource::kVmGuarPages].barrier = 300;
  t[UbcResource::kOomGuarPages].barrier = 200;
  v.containers = {{"a", "hn1", "", t}, {"b", "hn1", "", t}, {"c", "hn2", "", t}};
  EXPECT_EQ(v.Committed("hn1"), 600u);
  EXPECT_EQ(v.Uncommitted("hn1"), 900);
  v.nodes[0].ram_pages = 100;
  v.nodes[0].swap_pages = 0;
  EXPECT_EQ(v.Uncommitted("hn1"), -500);
  EXPECT_EQ(v.FindNode("nosuch"), nullptr);
}

TEST(ClusterViewTest, NextProfileIsOneRungUp) {
  ClusterView v;
  v.ladder = {P64(), P128(), P256()};
  EXPECT_EQ(v.NextProfile(Table(P64()))->name, "128MiB");
  EXPECT_EQ(v.NextProfile(Table(P128()))->name, "256MiB");
  EXPECT_FALSE(v.NextProfile(Table(P256())).has_value());
}

ClusterView TwoNodeCluster(std::uint64_t hn1_pages, std::uint64_t hn2_pages) {
  ClusterView v;
  v.ladder = {P64(), P128()};
  v.nodes = {{"hn1", hn1_pages, 0, 0, false}, {"hn2", hn2_pages, 0, 0, false}};
  v.containers = {{"web", "hn1", "", Table(P64())}};
  return v;
}

TEST(MemResolveTest, RaisesInPlaceWhenHostHasHeadroom) {
  const ClusterView v = TwoNodeCluster(MibToPages(2048), MibToPages(2048));
  const ResolverOutcome o = MemResolve("web", v, Threshold(0.8));
  EXPECT_EQ(o.action, ResolverAction::kRaisedLimits);
  EXPECT_EQ(o.source, "hn1");
  EXPECT_EQ(o.profile->name, "128MiB");
  const ActionRequest r = o.ToRequest();
  EXPECT_EQ(r.kind, ActionKind::kAdjustUbc);
  EXPECT_TRUE(r.target.empty());
}

TEST(MemResolveTest, GrowthExactlyCoveredStillRaises) {
  ClusterView v = TwoNodeCluster(MibToPages(128), 0);
  EXPECT_EQ(v.Uncommitted("hn1"), static_cast<std::int64_t>(MibToPages(64)));
  EXPECT_EQ(MemResolve("web", v, {}).action, ResolverAction::kRaisedLimits);
  v.nodes[0].ram_pages -= 1;
  EXPECT_NE(MemResolve("web", v, {}).action, ResolverAction::kRaisedLimits);
}

TEST(MemResolveTest, MigratesToNodeWithMostUncommittedMemory) {
  ClusterView v = TwoNodeCluster(MibToPages(100), MibToPages(512));
  v.nodes.push_back({"hn3", MibToPages(1024), 0, 0, false});
  v.nodes.push_back({"hn4", MibToPages(64), 0, 0, false});
  const ResolverOutcome o = MemResolve("web", v, {});
  EXPECT_EQ(o.action, ResolverAction::kMigrationRequested);
  EXPECT_EQ(o.target, "hn3");
  EXPECT_EQ(o.profile->name, "128MiB");
  EXPECT_EQ(o.ToRequest().kind, ActionKind::kMigrate);
}

TEST(MemResolveTest, BusyNodesAreNotTargets) {
  ClusterView v = TwoNodeCluster(MibToPages(100), MibToPages(512));
  v.nodes.push_back({"hn3", MibToPages(1024), 0, 0, true});
  EXPECT_EQ(MemResolve("web", v, {}).target, "hn2");
  v.nodes[1].busy = true;
  const ResolverOutcome o = MemResolve("web", v, {});
  EXPECT_EQ(o.action, ResolverAction::kUnresolved);
  EXPECT_EQ(o.detail, "no headroom for a limit raise");
}

TEST(MemResolveTest, TargetMustFitNextRungGuarantee) {
  ClusterView v = TwoNodeCluster(MibToPages(100), MibToPages(127));
  EXPECT_EQ(MemResolve("web", v, {}).action, ResolverAction::kUnresolved);
}

TEST(MemResolveTest, TopRungIsUnresolved) {
  ClusterView v = TwoNodeCluster(MibToPages(4096), MibToPages(4096));
  v.containers[0].ubc = Table(P128());
  const ResolverOutcome o = MemResolve("web", v, {});
  EXPECT_EQ(o.action, ResolverAction::kUnresolved);
  EXPECT_EQ(o.detail, "already at the largest profile");
  EXPECT_THROW(o.ToRequest(), Error);
}

TEST(MemResolveTest, ReplicatesBusyGroupWhenEnabled) {
  ClusterView v = TwoNodeCluster(MibToPages(4096), MibToPages(4096));
  UbcTable t = Table(P128());
  t[UbcResource::kOomGuarPages].held = 25600 * 9 / 10;
  v.containers = {{"web", "hn1", "g", t}};
  PolicyState off;
  EXPECT_EQ(MemResolve("web", v, off).action, ResolverAction::kUnresolved);
  PolicyState on{{"replication", std::int64_t{1}}};
  const ResolverOutcome o = MemResolve("web", v, on);
  EXPECT_EQ(o.action, ResolverAction::kReplicationRequested);
  EXPECT_EQ(o.target, "hn2");
  const ActionRequest r = o.ToRequest();
  EXPECT_EQ(r.kind, ActionKind::kReplicate);
  EXPECT_EQ(r.image_id, "web");
}

TEST(MemResolveTest, ReplicationNeedsEveryMemberAboveLevel) {
  ClusterView v = TwoNodeCluster(MibToPages(4096), MibToPages(4096));
  v.nodes.push_back({"hn3", MibToPages(4096), 0, 0, false});
  UbcTable hot = Table(P128());
  hot[UbcResource::kOomGuarPages].held = 25000;
  UbcTable cold = Table(P128());
  v.containers = {{"web", "hn1", "g", hot}, {"web2", "hn2", "g", cold}};
  PolicyState on{{"replication", std::int64_t{1}}};
  EXPECT_EQ(MemResolve("web", v, on).action, ResolverAction::kUnresolved);
  v.containers[1].ubc = hot;
  const ResolverOutcome o = MemResolve("web", v, on);
  EXPECT_EQ(o.action, ResolverAction::kReplicationRequested);
  EXPECT_EQ(o.target, "hn3");
}

TEST(MemResolveTest, UnknownContainer) {
  const ClusterView v = TwoNodeCluster(1, 1);
  EXPECT_EQ(MemResolve("nosuch", v, {}).action, ResolverAction::kUnresolved);
}

TEST(NodeResolveTest, MovesLargestContainerToFirstFittingNode) {
  ClusterView v;
  v.nodes = {{"hn1", 1000, 0, 950, false},
             {"hn3", 1000, 0, 100, false},
             {"hn2", 1000, 0, 500, false}};
  UbcTable small, big;
  small[UbcResource::kOomGuarPages].held = 100;
  big[UbcResource::kOomGuarPages].held = 250;
  v.containers = {{"a", "hn1", "", small}, {"b", "hn1", "", big}};
  const ResolverOutcome o = NodeResolve("hn1", v, 0.8);
  EXPECT_EQ(o.action, ResolverAction::kMigrationRequested);
  EXPECT_EQ(o.container_id, "b");
  EXPECT_EQ(o.target, "hn2");
}

TEST(NodeResolveTest, FallsThroughToSmallerContainer) {
  ClusterView v;
  v.nodes = {{"hn1", 1000, 0, 950, false}, {"hn2", 1000, 0, 600, false}};
  UbcTable small, big;
  small[UbcResource::kOomGuarPages].held = 150;
  big[UbcResource::kOomGuarPages].held = 400;
  v.containers = {{"a", "hn1", "", small}, {"b", "hn1", "", big}};
  const ResolverOutcome o = NodeResolve("hn1", v, 0.8);
  EXPECT_EQ(o.container_id, "a");
  v.nodes[1].busy = true;
  EXPECT_EQ(NodeResolve("hn1", v, 0.8).action, ResolverAction::kUnresolved);
}

TEST(RepositoryTest, ResolversOrderedByPriorityThenRegistration) {
  ResolverRepository repo;
  repo.Register("mem", "low", 1, std::make_unique<MemoryResolver>());
  repo.Register("mem", "high", 9, std::make_unique<MemoryResolver>());
  repo.Register("mem", "high2", 9, std::make_unique<MemoryResolver>());
  repo.Register("cpu", "x", 100, std::make_unique<RebalanceResolver>());
  const auto regs = repo.ForResource("mem");
  ASSERT_EQ(regs.size(), 3u);
  EXPECT_EQ(regs[0]->id, "high");
  EXPECT_EQ(regs[1]->id, "high2");
  EXPECT_EQ(regs[2]->id, "low");
  EXPECT_TRUE(repo.ForResource("net").empty());
}

TEST(RepositoryTest, DefaultPoliciesRegistered) {
  PolicyRepository repo;
  RegisterDefaultPolicies(repo);
  EXPECT_NE(repo.Find("mem", "default"), nullptr);
  EXPECT_NE(repo.Find("cpu", "auto_regressive_order_1"), nullptr);
  EXPECT_EQ(repo.Find("mem", "nosuch"), nullptr);
  EXPECT_TRUE(repo.GetPolicyState("mem", "default").empty());
}

TEST(StateOptionNameTest, ParsesResourceAndId) {
  auto k = ParseStateOptionName("overload-cpu-auto_regressive_order_1");
  ASSERT_TRUE(k.has_value());
  EXPECT_EQ(k->first, "cpu");
  EXPECT_EQ(k->second, "auto_regressive_order_1");
  k = ParseStateOptionName("overload-mem-my-id");
  EXPECT_EQ(k->second, "my-id");
  EXPECT_FALSE(ParseStateOptionName("overload-mem").has_value());
  EXPECT_FALSE(ParseStateOptionName("overload--x").has_value());
  EXPECT_FALSE(ParseStateOptionName("other-mem-x").has_value());
}

TEST(StateLoaderTest, InitializesAndTracksRuntimeChanges) {
  ConfigTree tree;
  tree.Set(kStateSection, "overload-mem-default",
           MapValue{{"threshold", 0.80}});
  ConfigManager config(tree);
  PolicyRepository repo;
  {
    ConfigPolicyStateLoader loader(config, repo);
    EXPECT_DOUBLE_EQ(ThresholdOf(repo.GetPolicyState("mem", "default")), 0.80);
    config.Set(kStateSection, "overload-mem-default",
               MapValue{{"threshold", 0.5}});
    EXPECT_DOUBLE_EQ(ThresholdOf(repo.GetPolicyState("mem", "default")), 0.5);
    config.Set(kStateSection, "overload-cpu-x", MapValue{{"threshold", 0.2}});
    EXPECT_DOUBLE_EQ(ThresholdOf(repo.GetPolicyState("cpu", "x")), 0.2);
  }
  config.Set(kStateSection, "overload-mem-default",
             MapValue{{"threshold", 0.9}});
  EXPECT_DOUBLE_EQ(ThresholdOf(repo.GetPolicyState("mem", "default")), 0.5);
}

TEST(MemoryPolicyTest, SingleObservationComparesWithItself) {
  MemoryOverloadPolicy policy;
  UbcTable t = Table(P64());
  t[UbcResource::kPrivVmPages].held = 16000;
  t[UbcResource::kPrivVmPages].failcnt = 4;
  const std::vector<ContainerObservation> h = {Obs("a", t)};
  EXPECT_EQ(policy.CheckContainer(h, Threshold(0.99)), Verdict::kNotStressed);
  EXPECT_EQ(policy.CheckContainer(h, Threshold(0.9)), Verdict::kStressed);
  EXPECT_EQ(policy.CheckContainer({}, Threshold(0.0)), Verdict::kNotStressed);
}

TEST(MemoryPolicyTest, NodeStressIsResidentOverRam) {
  MemoryOverloadPolicy policy;
  NodeDescriptor n{"hn1", 1000, 0};
  std::vector<NodeObservation> h(1);
  h[0].resident_used = 801;
  EXPECT_EQ(policy.CheckNode(n, h, Threshold(0.8)), Verdict::kStressed);
  h[0].resident_used = 800;
  EXPECT_EQ(policy.CheckNode(n, h, Threshold(0.8)), Verdict::kNotStressed);
}

}  // namespace
}  // namespace ubcsim
