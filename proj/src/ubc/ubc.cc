#include "ubcsim/ubc.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ubcsim/error.h"

namespace ubcsim {
namespace {

constexpr std::array<std::string_view, kUbcResourceCount> kNames = {
    "vmguarpages", "privvmpages",  "oomguarpages", "kmemsize",  "tcpsndbuf",
    "tcprcvbuf",   "othersockbuf", "dgramrcvbuf",  "physpages",
};

std::uint64_t SaturatingAdd(std::uint64_t a, std::uint64_t b) {
  return a > kUnlimited - b ? kUnlimited : a + b;
}

void Raise(UbcParam& p, std::uint64_t units) {
  p.held += units;
  p.maxheld = std::max(p.maxheld, p.held);
}

}  // namespace

std::uint64_t MibToPages(double mib) {
  if (!(mib >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "negative size in MiB");
  }
  return static_cast<std::uint64_t>(std::llround(mib * kPagesPerMib));
}

double PagesToMib(std::uint64_t pages) {
  return static_cast<double>(pages) / static_cast<double>(kPagesPerMib);
}

std::uint64_t BytesToPages(std::uint64_t bytes) {
  return bytes / kPageBytes + (bytes % kPageBytes != 0 ? 1 : 0);
}

std::string_view ResourceName(UbcResource resource) {
  return kNames[static_cast<std::size_t>(resource)];
}

std::optional<UbcResource> ParseResource(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<UbcResource>(i);
  }
  return std::nullopt;
}

std::uint64_t UbcTable::Guarantee() const {
  return std::max((*this)[UbcResource::kVmGuarPages].barrier,
                  (*this)[UbcResource::kOomGuarPages].barrier);
}

std::uint64_t UbcTable::OomUsagePages() const {
  std::uint64_t total = (*this)[UbcResource::kOomGuarPages].held;
  total += BytesToPages((*this)[UbcResource::kKmemSize].held);
  for (UbcResource r : kBufferResources) {
    total += BytesToPages((*this)[r].held);
  }
  return total;
}

MemoryProfile MemoryProfile::FromMib(std::string name, double oomguar_barrier,
                                     double vmguar_barrier,
                                     double privvm_barrier,
                                     double privvm_limit) {
  MemoryProfile p;
  p.name = std::move(name);
  p.oomguarpages_barrier = MibToPages(oomguar_barrier);
  p.vmguarpages_barrier = MibToPages(vmguar_barrier);
  p.privvmpages_barrier = MibToPages(privvm_barrier);
  p.privvmpages_limit = MibToPages(privvm_limit);
  return p;
}

void MemoryProfile::Validate() const {
  if (oomguarpages_barrier == 0 || vmguarpages_barrier == 0 ||
      privvmpages_barrier == 0 || privvmpages_limit == 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "profile '" + name + "' has a zero-sized value");
  }
  if (privvmpages_barrier > privvmpages_limit) {
    throw Error(ErrorCode::kInvalidArgument,
                "profile '" + name + "': privvmpages barrier exceeds limit");
  }
}

void ApplyProfile(UbcTable& table, const MemoryProfile& profile) {
  profile.Validate();
  table[UbcResource::kOomGuarPages].barrier = profile.oomguarpages_barrier;
  table[UbcResource::kOomGuarPages].limit = kUnlimited;
  table[UbcResource::kVmGuarPages].barrier = profile.vmguarpages_barrier;
  table[UbcResource::kVmGuarPages].limit = kUnlimited;
  table[UbcResource::kPrivVmPages].barrier = profile.privvmpages_barrier;
  table[UbcResource::kPrivVmPages].limit = profile.privvmpages_limit;
}

std::vector<std::string> CheckTypicalOrdering(const UbcTable& table) {
  std::vector<std::string> warnings;
  const auto& vmguar = table[UbcResource::kVmGuarPages];
  const auto& privvm = table[UbcResource::kPrivVmPages];
  const auto& oomguar = table[UbcResource::kOomGuarPages];
  auto warn = [&](std::string_view lhs, std::uint64_t a, std::string_view rhs,
                  std::uint64_t b) {
    if (a > b) {
      std::ostringstream os;
      os << lhs << " (" << a << ") exceeds " << rhs << " (" << b << ")";
      warnings.push_back(os.str());
    }
  };
  warn("vmguarpages.barrier", vmguar.barrier, "privvmpages.barrier",
       privvm.barrier);
  warn("privvmpages.barrier", privvm.barrier, "privvmpages.limit",
       privvm.limit);
  warn("oomguarpages.barrier", oomguar.barrier, "vmguarpages.barrier",
       vmguar.barrier);
  return warnings;
}

ChargeResult ChargePrivvm(UbcTable& table, std::uint64_t pages,
                          bool host_has_free, bool high_priority) {
  if (pages == 0) {
    throw Error(ErrorCode::kInvalidArgument, "charge of zero pages");
  }
  UbcParam& privvm = table[UbcResource::kPrivVmPages];
  const std::uint64_t guarantee = table[UbcResource::kVmGuarPages].barrier;
  const std::uint64_t total = SaturatingAdd(privvm.held, pages);

  bool granted;
  if (total > privvm.limit || total == kUnlimited) {
    granted = false;
  } else if (total <= guarantee) {
    granted = true;
  } else if (total <= privvm.barrier) {
    granted = host_has_free;
  } else {
    granted = high_priority && host_has_free;
  }

  if (!granted) {
    ++privvm.failcnt;
    return ChargeResult::kDenied;
  }
  Raise(privvm, pages);
  return ChargeResult::kGranted;
}

void Hold(UbcTable& table, UbcResource resource, std::uint64_t units) {
  Raise(table[resource], units);
}

void Uncharge(UbcTable& table, UbcResource resource, std::uint64_t units) {
  UbcParam& p = table[resource];
  if (units > p.held) {
    std::ostringstream os;
    os << "uncharging " << units << " from " << ResourceName(resource)
       << " with held " << p.held;
    throw Error(ErrorCode::kUnderflow, os.str());
  }
  p.held -= units;
}

StabilityReport CheckStability(std::span<const UbcTable> tables,
                               std::uint64_t node_ram,
                               std::uint64_t node_swap) {
  StabilityReport report;
  for (const UbcTable& t : tables) {
    report.committed_pages = SaturatingAdd(report.committed_pages, t.Guarantee());
  }
  report.capacity_pages = SaturatingAdd(node_ram, node_swap);
  if (report.committed_pages == 0) {
    report.overcommit_factor = 0.0;
  } else if (report.capacity_pages == 0 ||
             report.committed_pages == kUnlimited) {
    report.overcommit_factor = std::numeric_limits<double>::infinity();
  } else {
    report.overcommit_factor = static_cast<double>(report.committed_pages) /
                               static_cast<double>(report.capacity_pages);
  }
  report.stable = report.overcommit_factor <= 1.0;
  return report;
}

}  // namespace ubcsim
