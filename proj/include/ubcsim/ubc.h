#ifndef UBCSIM_UBC_H_
#define UBCSIM_UBC_H_

// User beancounter accounting: per-container resource parameters with
// held/maxheld/barrier/limit/failcnt attributes, the privvmpages charging
// tiers, and node-level stability (overcommitment) checks.

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ubcsim {

inline constexpr std::uint64_t kPageBytes = 4096;
inline constexpr std::uint64_t kPagesPerMib = (1u << 20) / kPageBytes;

// "unlimited" is the maximum representable count; it compares greater than
// every finite value.
inline constexpr std::uint64_t kUnlimited =
    std::numeric_limits<std::uint64_t>::max();

// Rounds to the nearest whole page.
std::uint64_t MibToPages(double mib);
double PagesToMib(std::uint64_t pages);
// Ceiling division; used for byte-denominated parameters.
std::uint64_t BytesToPages(std::uint64_t bytes);

enum class UbcResource : std::size_t {
  kVmGuarPages = 0,
  kPrivVmPages,
  kOomGuarPages,
  kKmemSize,
  kTcpSndBuf,
  kTcpRcvBuf,
  kOtherSockBuf,
  kDgramRcvBuf,
  kPhysPages,
};
inline constexpr std::size_t kUbcResourceCount = 9;

inline constexpr std::array<UbcResource, 4> kBufferResources = {
    UbcResource::kTcpSndBuf, UbcResource::kTcpRcvBuf,
    UbcResource::kOtherSockBuf, UbcResource::kDgramRcvBuf};

std::string_view ResourceName(UbcResource resource);
std::optional<UbcResource> ParseResource(std::string_view name);

struct UbcParam {
  std::uint64_t held = 0;
  std::uint64_t maxheld = 0;
  std::uint64_t barrier = kUnlimited;
  std::uint64_t limit = kUnlimited;
  std::uint64_t failcnt = 0;

  bool operator==(const UbcParam&) const = default;
};

class UbcTable {
 public:
  UbcParam& operator[](UbcResource r) {
    return params_[static_cast<std::size_t>(r)];
  }
  const UbcParam& operator[](UbcResource r) const {
    return params_[static_cast<std::size_t>(r)];
  }

  bool operator==(const UbcTable&) const = default;

  // max(vmguarpages.barrier, oomguarpages.barrier), in pages.
  std::uint64_t Guarantee() const;

  // oomguarpages.held plus kmemsize and the socket buffers converted to
  // pages: the amount weighed against oomguarpages.barrier.
  std::uint64_t OomUsagePages() const;

 private:
  std::array<UbcParam, kUbcResourceCount> params_{};
};

struct MemoryProfile {
  std::string name;
  std::uint64_t oomguarpages_barrier = 0;
  std::uint64_t vmguarpages_barrier = 0;
  std::uint64_t privvmpages_barrier = 0;
  std::uint64_t privvmpages_limit = 0;

  // Values are converted at 4 KiB pages.
  static MemoryProfile FromMib(std::string name, double oomguar_barrier,
                               double vmguar_barrier, double privvm_barrier,
                               double privvm_limit);

  // Throws kInvalidArgument unless every value is positive and
  // privvmpages_barrier <= privvmpages_limit.
  void Validate() const;

  std::uint64_t Guarantee() const {
    return std::max(vmguarpages_barrier, oomguarpages_barrier);
  }

  bool operator==(const MemoryProfile&) const = default;
};

// Sets the three memory beancounters' barriers/limits from |profile|;
// held, maxheld and failcnt are left untouched.
void ApplyProfile(UbcTable& table, const MemoryProfile& profile);

// Warnings (not errors) for tables deviating from the typical ordering
// oomguarpages.barrier <= vmguarpages.barrier <= privvmpages.barrier <=
// privvmpages.limit.
std::vector<std::string> CheckTypicalOrdering(const UbcTable& table);

enum class ChargeResult { kGranted, kDenied };

// Charges |pages| private pages. Tiers on t = privvmpages.held + pages:
//   t > privvmpages.limit                      -> denied
//   t <= vmguarpages.barrier                   -> granted (guarantee)
//   t <= privvmpages.barrier                   -> granted iff host_has_free
//   otherwise (up to the limit)                -> granted iff high_priority
//                                                  and host_has_free
// A denial bumps privvmpages.failcnt and leaves held unchanged.
ChargeResult ChargePrivvm(UbcTable& table, std::uint64_t pages,
                          bool host_has_free, bool high_priority);

// Unconditional charge for parameters the model never limits (kmemsize,
// socket buffers, physpages, oomguarpages).
void Hold(UbcTable& table, UbcResource resource, std::uint64_t units);

// Throws kUnderflow when units > held.
void Uncharge(UbcTable& table, UbcResource resource, std::uint64_t units);

struct StabilityReport {
  std::uint64_t committed_pages = 0;
  std::uint64_t capacity_pages = 0;
  double overcommit_factor = 0.0;
  bool stable = true;
};

StabilityReport CheckStability(std::span<const UbcTable> tables,
                               std::uint64_t node_ram, std::uint64_t node_swap);

}  // namespace ubcsim

#endif  // UBCSIM_UBC_H_
