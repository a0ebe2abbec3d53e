#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "support/oracles.h"
#include "ubcsim/error.h"
#include "ubcsim/ubc.h"

namespace ubcsim {
namespace {

UbcTable TableFor(const MemoryProfile& p) {
  UbcTable t;
  ApplyProfile(t, p);
  return t;
}

MemoryProfile Profile64() { return MemoryProfile::FromMib("64MiB", 60, 64, 64, 66); }
MemoryProfile Profile128() {
  return MemoryProfile::FromMib("128MiB", 100, 128, 128, 132);
}

TEST(UnitConversion, PagesPerMebibyte) {
  EXPECT_EQ(kPagesPerMib, 256u);
  EXPECT_EQ(MibToPages(64), 16384u);
  EXPECT_DOUBLE_EQ(PagesToMib(16896), 66.0);
  EXPECT_EQ(BytesToPages(0), 0u);
  EXPECT_EQ(BytesToPages(1), 1u);
  EXPECT_EQ(BytesToPages(4096), 1u);
  EXPECT_EQ(BytesToPages(4097), 2u);
}

TEST(MemoryProfileTest, SixtyFourMibValuesInPages) {
  const MemoryProfile p = Profile64();
  EXPECT_EQ(p.oomguarpages_barrier, 15360u);
  EXPECT_EQ(p.vmguarpages_barrier, 16384u);
  EXPECT_EQ(p.privvmpages_barrier, 16384u);
  EXPECT_EQ(p.privvmpages_limit, 16896u);
  EXPECT_EQ(p.Guarantee(), 16384u);
}

TEST(MemoryProfileTest, OneTwentyEightMibValuesInPages) {
  const MemoryProfile p = Profile128();
  EXPECT_EQ(p.oomguarpages_barrier, 25600u);
  EXPECT_EQ(p.vmguarpages_barrier, 32768u);
  EXPECT_EQ(p.privvmpages_barrier, 32768u);
  EXPECT_EQ(p.privvmpages_limit, 33792u);
}

TEST(MemoryProfileTest, ValidateRejectsBarrierAboveLimit) {
  MemoryProfile p = Profile64();
  p.privvmpages_limit = p.privvmpages_barrier - 1;
  EXPECT_THROW(p.Validate(), Error);
  MemoryProfile zero = Profile64();
  zero.oomguarpages_barrier = 0;
  EXPECT_THROW(zero.Validate(), Error);
}

TEST(ApplyProfileTest, LeavesCountersAlone) {
  UbcTable t = TableFor(Profile64());
  Hold(t, UbcResource::kPrivVmPages, 100);
  t[UbcResource::kPrivVmPages].failcnt = 7;
  ApplyProfile(t, Profile128());
  EXPECT_EQ(t[UbcResource::kPrivVmPages].held, 100u);
  EXPECT_EQ(t[UbcResource::kPrivVmPages].failcnt, 7u);
  EXPECT_EQ(t[UbcResource::kPrivVmPages].limit, 33792u);
  EXPECT_EQ(t[UbcResource::kOomGuarPages].limit, kUnlimited);
}

TEST(TypicalOrderingTest, WarnsOnInvertedGuarantees) {
  EXPECT_TRUE(CheckTypicalOrdering(TableFor(Profile64())).empty());
  UbcTable t = TableFor(Profile64());
  t[UbcResource::kOomGuarPages].barrier = 20000;
  EXPECT_FALSE(CheckTypicalOrdering(t).empty());
}

TEST(ChargeTiers, GuaranteeTierIgnoresHostState) {
  UbcTable t = TableFor(Profile64());
  EXPECT_EQ(ChargePrivvm(t, 16384, false, false), ChargeResult::kGranted);
  EXPECT_EQ(t[UbcResource::kPrivVmPages].held, 16384u);
  EXPECT_EQ(t[UbcResource::kPrivVmPages].failcnt, 0u);
}

TEST(ChargeTiers, BarrierTierNeedsHostMemory) {
  UbcTable t = TableFor(Profile128());
  t[UbcResource::kVmGuarPages].barrier = 1000;
  EXPECT_EQ(ChargePrivvm(t, 2000, false, false), ChargeResult::kDenied);
  EXPECT_EQ(t[UbcResource::kPrivVmPages].failcnt, 1u);
  EXPECT_EQ(ChargePrivvm(t, 2000, true, false), ChargeResult::kGranted);
}

TEST(ChargeTiers, AboveBarrierOnlyForHighPriority) {
  UbcTable t = TableFor(Profile64());
  ASSERT_EQ(ChargePrivvm(t, 16384, true, false), ChargeResult::kGranted);
  EXPECT_EQ(ChargePrivvm(t, 100, true, false), ChargeResult::kDenied);
  EXPECT_EQ(ChargePrivvm(t, 100, false, true), ChargeResult::kDenied);
  EXPECT_EQ(ChargePrivvm(t, 100, true, true), ChargeResult::kGranted);
  EXPECT_EQ(t[UbcResource::kPrivVmPages].failcnt, 2u);
}

TEST(ChargeTiers, LimitIsHard) {
  UbcTable t = TableFor(Profile64());
  EXPECT_EQ(ChargePrivvm(t, 16897, true, true), ChargeResult::kDenied);
  EXPECT_EQ(ChargePrivvm(t, 16896, true, true), ChargeResult::kGranted);
  EXPECT_EQ(ChargePrivvm(t, 1, true, true), ChargeResult::kDenied);
  EXPECT_EQ(t[UbcResource::kPrivVmPages].held, 16896u);
}

TEST(ChargeTiers, SaturatedSumIsDenied) {
  UbcTable t;
  Hold(t, UbcResource::kPrivVmPages, kUnlimited - 10);
  EXPECT_EQ(ChargePrivvm(t, 100, true, true), ChargeResult::kDenied);
  EXPECT_EQ(t[UbcResource::kPrivVmPages].held, kUnlimited - 10);
}

TEST(ChargeTiers, ZeroPagesRejected) {
  UbcTable t = TableFor(Profile64());
  EXPECT_THROW(ChargePrivvm(t, 0, true, true), Error);
}

TEST(UnchargeTest, TracksMaxheldAndRejectsUnderflow) {
  UbcTable t = TableFor(Profile64());
  ASSERT_EQ(ChargePrivvm(t, 500, true, false), ChargeResult::kGranted);
  Uncharge(t, UbcResource::kPrivVmPages, 200);
  EXPECT_EQ(t[UbcResource::kPrivVmPages].held, 300u);
  EXPECT_EQ(t[UbcResource::kPrivVmPages].maxheld, 500u);
  try {
    Uncharge(t, UbcResource::kPrivVmPages, 301);
    FAIL() << "expected underflow";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnderflow);
  }
  EXPECT_EQ(t[UbcResource::kPrivVmPages].held, 300u);
}

TEST(ChargeProperty, MatchesScalarOracleOnRandomSequences) {
  std::mt19937_64 rng(20261016);
  for (int seq = 0; seq < 500; ++seq) {
    std::uniform_int_distribution<std::uint64_t> barrier(1, 40000);
    const std::uint64_t vmguar = barrier(rng);
    const std::uint64_t privvm = barrier(rng);
    const std::uint64_t limit = privvm + barrier(rng) / 4;
    UbcTable t;
    t[UbcResource::kVmGuarPages].barrier = vmguar;
    t[UbcResource::kPrivVmPages].barrier = privvm;
    t[UbcResource::kPrivVmPages].limit = limit;
    testing::ChargeOracle o;
    o.vmguar_barrier = vmguar;
    o.privvm_barrier = privvm;
    o.privvm_limit = limit;
    for (int step = 0; step < 60; ++step) {
      std::uniform_int_distribution<std::uint64_t> pages(1, limit / 3 + 1);
      const std::uint64_t n = pages(rng);
      if (rng() % 3 == 0) {
        const bool ok = o.Uncharge(n);
        if (ok) {
          Uncharge(t, UbcResource::kPrivVmPages, n);
        } else {
          EXPECT_THROW(Uncharge(t, UbcResource::kPrivVmPages, n), Error);
        }
      } else {
        const bool free = rng() % 2 == 0;
        const bool high = rng() % 2 == 0;
        const bool expect = o.Charge(n, free, high);
        const ChargeResult got = ChargePrivvm(t, n, free, high);
        ASSERT_EQ(got == ChargeResult::kGranted, expect);
      }
      const UbcParam& p = t[UbcResource::kPrivVmPages];
      ASSERT_EQ(p.held, o.held);
      ASSERT_EQ(p.maxheld, o.maxheld);
      ASSERT_EQ(p.failcnt, o.failcnt);
      ASSERT_LE(p.held, p.maxheld);
      ASSERT_LE(p.held, limit);
    }
  }
}

TEST(StabilityTest, FactorIsGuaranteesOverCapacity) {
  std::vector<UbcTable> tables = {TableFor(Profile64()), TableFor(Profile128())};
  const StabilityReport r = CheckStability(tables, MibToPages(96), MibToPages(0));
  EXPECT_EQ(r.committed_pages, 16384u + 32768u);
  EXPECT_EQ(r.capacity_pages, MibToPages(96));
  EXPECT_DOUBLE_EQ(r.overcommit_factor, 192.0 / 96.0);
  EXPECT_FALSE(r.stable);
}

TEST(StabilityTest, ExactlyFullIsStable) {
  std::vector<UbcTable> tables = {TableFor(Profile128())};
  const StabilityReport r = CheckStability(tables, MibToPages(64), MibToPages(64));
  EXPECT_DOUBLE_EQ(r.overcommit_factor, 1.0);
  EXPECT_TRUE(r.stable);
}

TEST(StabilityTest, UsesLargerOfTheTwoGuarantees) {
  UbcTable t;
  t[UbcResource::kVmGuarPages].barrier = 100;
  t[UbcResource::kOomGuarPages].barrier = 300;
  std::vector<UbcTable> tables = {t};
  EXPECT_EQ(CheckStability(tables, 1000, 0).committed_pages, 300u);
}

TEST(ResourceNames, RoundTrip) {
  for (std::size_t i = 0; i < kUbcResourceCount; ++i) {
    const auto r = static_cast<UbcResource>(i);
    EXPECT_EQ(ParseResource(ResourceName(r)), r);
  }
  EXPECT_EQ(ResourceName(UbcResource::kPrivVmPages), "privvmpages");
  EXPECT_FALSE(ParseResource("nosuch").has_value());
}

TEST(OomUsageTest, CeilsEachByteCounterSeparately) {
  UbcTable t;
  Hold(t, UbcResource::kOomGuarPages, 10);
  Hold(t, UbcResource::kKmemSize, 4097);
  Hold(t, UbcResource::kTcpSndBuf, 1);
  Hold(t, UbcResource::kTcpRcvBuf, 1);
  EXPECT_EQ(t.OomUsagePages(), 10u + 2u + 1u + 1u);
}

}  // namespace
}  // namespace ubcsim
