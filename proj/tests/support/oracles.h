#ifndef UBCSIM_TESTS_SUPPORT_ORACLES_H_
#define UBCSIM_TESTS_SUPPORT_ORACLES_H_

// Independent reference models and random generators shared by the unit
// and acceptance suites. Nothing here calls into the code under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ubcsim::testing {

inline std::string SourcePath(const std::string& relative) {
  return std::string(UBCSIM_TEST_SOURCE_DIR) + "/" + relative;
}

// Scalar replay of the privvmpages charge rules, written from the tier
// table rather than from the implementation.
struct ChargeOracle {
  static constexpr std::uint64_t kMax =
      std::numeric_limits<std::uint64_t>::max();

  std::uint64_t held = 0;
  std::uint64_t maxheld = 0;
  std::uint64_t failcnt = 0;
  std::uint64_t vmguar_barrier = 0;
  std::uint64_t privvm_barrier = 0;
  std::uint64_t privvm_limit = 0;

  bool Charge(std::uint64_t pages, bool host_free, bool high_priority) {
    const unsigned __int128 wide =
        static_cast<unsigned __int128>(held) + pages;
    bool ok;
    if (wide >= kMax || wide > privvm_limit) {
      ok = false;
    } else {
      const auto t = static_cast<std::uint64_t>(wide);
      if (t <= vmguar_barrier) {
        ok = true;
      } else if (t <= privvm_barrier) {
        ok = host_free;
      } else {
        ok = host_free && high_priority;
      }
    }
    if (!ok) {
      failcnt += 1;
      return false;
    }
    held += pages;
    if (held > maxheld) maxheld = held;
    return true;
  }

  // False on underflow, leaving the state unchanged.
  bool Uncharge(std::uint64_t pages) {
    if (pages > held) return false;
    held -= pages;
    return true;
  }
};

inline std::uint64_t CeilPages(std::uint64_t bytes) {
  return bytes / 4096 + (bytes % 4096 != 0 ? 1 : 0);
}

// The four stress components of a container, computed from plain numbers.
struct ScoreOracleInput {
  std::uint64_t oom_fail_prev = 0, oom_fail_curr = 0;
  std::uint64_t privvm_fail_prev = 0, privvm_fail_curr = 0;
  std::uint64_t oomguar_held = 0, oomguar_barrier = 1;
  std::uint64_t kmem_bytes = 0;
  std::vector<std::uint64_t> buffer_bytes;  // one entry per socket buffer
  std::uint64_t privvm_held = 0, privvm_barrier = 1;
};

inline double ScoreOracle(const ScoreOracleInput& in) {
  const double c1 = in.oom_fail_curr > in.oom_fail_prev ? 1.0 : 0.0;
  const double c2 = in.privvm_fail_curr > in.privvm_fail_prev ? 1.0 : 0.0;
  double usage = static_cast<double>(in.oomguar_held + CeilPages(in.kmem_bytes));
  for (std::uint64_t b : in.buffer_bytes) usage += static_cast<double>(CeilPages(b));
  const double c3 = std::min(1.0, usage / static_cast<double>(in.oomguar_barrier));
  const double c4 = std::min(1.0, static_cast<double>(in.privvm_held) /
                                      static_cast<double>(in.privvm_barrier));
  return std::max({c1, c2, c3, c4});
}

inline double PopulationStddev(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  return std::sqrt(sq / static_cast<double>(xs.size()));
}

// Random JSON values for codec properties: nested objects and arrays of
// strings (with escapes and non-ASCII), integers, booleans, nulls and
// finite doubles.
class JsonGenerator {
 public:
  explicit JsonGenerator(std::uint64_t seed) : rng_(seed) {}

  std::string String() {
    static const std::vector<std::string> kPieces = {
        "a", "node", "\"", "\\", "/", "\n", "\t", " ", "\xc3\xa9",
        "\xe2\x82\xac", "{", "}", ",", ":", "0", "hn1"};
    std::string out;
    const int n = Int(0, 8);
    for (int i = 0; i < n; ++i) out += kPieces[Int(0, kPieces.size() - 1)];
    return out;
  }

  nlohmann::json Value(int depth) {
    const int kind = Int(0, depth > 0 ? 7 : 5);
    switch (kind) {
      case 0:
        return String();
      case 1:
        return Uint();
      case 2:
        return -static_cast<std::int64_t>(Int(1, 1000000));
      case 3:
        return Bool();
      case 4: {
        std::uniform_real_distribution<double> d(-1e6, 1e6);
        return d(rng_);
      }
      case 5:
        return nullptr;
      case 6: {
        nlohmann::json a = nlohmann::json::array();
        const int n = Int(0, 4);
        for (int i = 0; i < n; ++i) a.push_back(Value(depth - 1));
        return a;
      }
      default:
        return Object(depth - 1);
    }
  }

  nlohmann::json Object(int depth) {
    nlohmann::json o = nlohmann::json::object();
    const int n = Int(0, 5);
    for (int i = 0; i < n; ++i) o[String()] = Value(depth);
    return o;
  }

  std::uint64_t Uint() {
    switch (Int(0, 2)) {
      case 0:
        return static_cast<std::uint64_t>(Int(0, 100));
      case 1:
        return std::numeric_limits<std::uint64_t>::max();
      default:
        return rng_();
    }
  }

  bool Bool() { return Int(0, 1) == 1; }

  int Int(std::size_t lo, std::size_t hi) {
    std::uniform_int_distribution<std::size_t> d(lo, hi);
    return static_cast<int>(d(rng_));
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace ubcsim::testing

#endif  // UBCSIM_TESTS_SUPPORT_ORACLES_H_
