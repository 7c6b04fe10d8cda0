// Copyright 2026 The DomainBus Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DOMAINBUS__PERMANENT_BUFFERS_HPP_
#define DOMAINBUS__PERMANENT_BUFFERS_HPP_

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "domainbus/errors.hpp"
#include "domainbus/runtime.hpp"

namespace domainbus {

using RegionId = std::uint32_t;  // 0 is never a valid region
inline constexpr RegionId kInvalidRegion = 0;

/// Who may currently write a block's payload.
enum class Side : std::uint8_t {
  application,
  library,
};

enum class BlockStatus : std::uint8_t {
  empty,
  writing,
  ready,
};

inline const char* block_status_name(BlockStatus s) noexcept {
  switch (s) {
    case BlockStatus::empty: return "Empty";
    case BlockStatus::writing: return "Writing";
    case BlockStatus::ready: return "Ready";
  }
  return "unknown";
}

/// Handle to one allocated block: its region and starting granule.
struct BlockId {
  RegionId region = kInvalidRegion;
  std::uint32_t start = 0;

  bool operator==(const BlockId&) const = default;
};

struct BlockInfo {
  std::uint64_t offset = 0;
  std::uint64_t capacity = 0;  // granule_count * granule_size
  Side owner = Side::application;
  BlockStatus status = BlockStatus::empty;
  std::uint32_t sample_len = 0;
  std::uint32_t watermark = 0;
};

struct RegionVerifyReport {
  bool ok = true;
  std::string detail;
};

/// Per-process transfer memory. A region stays mapped for the life of its
/// process: sample payloads are handed over by changing block ownership,
/// never by remapping, so a receiver can trust that a source block does
/// not vanish mid-copy.
///
/// Each region keeps two copies of its block metadata. The authoritative
/// copy lives here and is only touched in Library mode. The advisory copy
/// is exported to the owning process for its own fast-path hints; nothing
/// in this class ever reads it back, so arbitrary corruption of the
/// advisory (or of payload bytes) cannot influence a Library decision.
///
/// Lock order note: callers holding the protected-heap lock may call into
/// this table, never the reverse.
class RegionTable {
 public:
  explicit RegionTable(Runtime& rt) : rt_(rt) {}

  RegionTable(const RegionTable&) = delete;
  RegionTable& operator=(const RegionTable&) = delete;

  /// Bounds check used on every untrusted offset; exactly two comparisons,
  /// immune to offset+len overflow.
  static constexpr bool offset_in_range(std::uint64_t region_size, std::uint64_t offset,
                                        std::uint64_t len) noexcept {
    return offset <= region_size && len <= region_size - offset;
  }

  Result<RegionId> map_region(DomainContext& ctx, std::uint64_t size) {
    if (ctx.mode() != ExecMode::library) {
      ctx.runtime().count_context_violation();
      return Errc::context_violation;
    }
    const std::uint32_t granule = rt_.config().granule_size;
    if (size < granule) {
      return Errc::invalid_argument;
    }
    std::lock_guard lock(mu_);
    const Pid owner = ctx.pid();
    if (reserved_[owner] + size > rt_.config().region_limit) {
      return Errc::reservation_limit_exceeded;
    }
    const RegionId id = next_region_id_++;
    Region& r = regions_[id];
    r.owner = owner;
    r.granule = granule;
    r.granule_count = static_cast<std::uint32_t>(size / granule);
    r.size = static_cast<std::uint64_t>(r.granule_count) * granule;
    r.mapped = true;
    r.data.resize(r.size);
    r.advisory = std::make_unique<std::atomic<std::uint32_t>[]>(
        static_cast<std::size_t>(r.granule_count) * kAdvisoryStride);
    r.used.assign(r.granule_count, 0);
    reserved_[owner] += r.size;
    return id;
  }

  /// Tearing down a region is a Library-only privilege; an Application
  /// context asking for it is treated as an attack and denied. This holds
  /// regardless of ownership: a process cannot unmap even its own region
  /// from Application mode.
  Status unmap_region(DomainContext& ctx, RegionId id) {
    if (ctx.mode() != ExecMode::library) {
      unmap_denied_.fetch_add(1, std::memory_order_relaxed);
      ctx.runtime().count_context_violation();
      return Errc::permission_denied;
    }
    std::lock_guard lock(mu_);
    Region* r = live_region(id);
    if (r == nullptr) {
      return Errc::invalid_argument;
    }
    for (const auto& [start, b] : r->blocks) {
      if (b.status == BlockStatus::writing) {
        return Errc::blocks_in_use;
      }
    }
    reserved_[r->owner] -= r->size;
    r->mapped = false;
    r->data.clear();
    r->data.shrink_to_fit();
    r->advisory.reset();
    r->used.clear();
    r->blocks.clear();
    return Status();
  }

  /// Changing page protection is likewise Library-only; the Application
  /// variant of the attack (flip the region writable-for-everyone) fails
  /// the same way unmapping does.
  Status change_region_protection(DomainContext& ctx, RegionId id, bool app_writable) {
    if (ctx.mode() != ExecMode::library) {
      unmap_denied_.fetch_add(1, std::memory_order_relaxed);
      ctx.runtime().count_context_violation();
      return Errc::permission_denied;
    }
    std::lock_guard lock(mu_);
    Region* r = live_region(id);
    if (r == nullptr) {
      return Errc::invalid_argument;
    }
    r->app_writable = app_writable;
    return Status();
  }

  /// First region owned by the calling process, mapping the default-size
  /// one on first use.
  Result<RegionId> primary_region(DomainContext& ctx) {
    if (ctx.mode() != ExecMode::library) {
      ctx.runtime().count_context_violation();
      return Errc::context_violation;
    }
    {
      std::lock_guard lock(mu_);
      auto it = primary_.find(ctx.pid());
      if (it != primary_.end()) {
        Region* r = live_region(it->second);
        if (r != nullptr) {
          return it->second;
        }
      }
    }
    auto mapped = map_region(ctx, rt_.config().region_size);
    if (!mapped.ok()) {
      return mapped.error();
    }
    std::lock_guard lock(mu_);
    primary_[ctx.pid()] = mapped.value();
    return mapped.value();
  }

  /// Primary region id of a process, if one was mapped; a read-only
  /// lookup usable from any protection mode.
  std::optional<RegionId> primary_of(Pid pid) const {
    std::lock_guard lock(mu_);
    auto it = primary_.find(pid);
    if (it == primary_.end()) {
      return std::nullopt;
    }
    return it->second;
  }

  /// First-fit allocation in whole granules.
  Result<BlockId> alloc_block(DomainContext& ctx, RegionId id, std::uint64_t capacity_bytes,
                              Side owner) {
    if (ctx.mode() != ExecMode::library) {
      ctx.runtime().count_context_violation();
      return Errc::context_violation;
    }
    std::lock_guard lock(mu_);
    Region* r = live_region(id);
    if (r == nullptr) {
      return Errc::invalid_argument;
    }
    if (capacity_bytes == 0 || capacity_bytes > r->size) {
      return Errc::invalid_argument;
    }
    const std::uint32_t need =
        static_cast<std::uint32_t>((capacity_bytes + r->granule - 1) / r->granule);
    std::uint32_t run = 0;
    for (std::uint32_t g = 0; g < r->granule_count; ++g) {
      run = r->used[g] ? 0 : run + 1;
      if (run == need) {
        const std::uint32_t start = g + 1 - need;
        r->used[start] = kGranuleBlockStart;
        for (std::uint32_t k = start + 1; k <= g; ++k) {
          r->used[k] = kGranuleBlockBody;
        }
        Block& b = r->blocks[start];
        b.granule_count = need;
        b.owner = owner;
        b.status = BlockStatus::empty;
        b.sample_len = 0;
        b.watermark = 0;
        blocks_allocated_.fetch_add(1, std::memory_order_relaxed);
        mirror(*r, start, b);
        return BlockId{id, start};
      }
    }
    alloc_failures_.fetch_add(1, std::memory_order_relaxed);
    return Errc::buffer_full;
  }

  /// Empty -> Writing, declaring the sample length the watermark will
  /// climb to.
  Status begin_write(DomainContext& ctx, const BlockId& bid, std::uint32_t sample_len) {
    return with_block(ctx, bid, [&](Region& r, Block& b) -> Status {
      if (b.status != BlockStatus::empty) {
        return Errc::invalid_state_transition;
      }
      if (sample_len == 0 || sample_len > capacity_of(r, b)) {
        return Errc::invalid_argument;
      }
      b.status = BlockStatus::writing;
      b.sample_len = sample_len;
      b.watermark = 0;
      mirror(r, bid.start, b);
      return Status();
    });
  }

  /// Monotone progress marker; reaching sample_len flips the block Ready.
  /// Never retreats and never passes sample_len.
  Status advance_watermark(DomainContext& ctx, const BlockId& bid, std::uint32_t n) {
    return with_block(ctx, bid, [&](Region& r, Block& b) -> Status {
      if (b.status != BlockStatus::writing) {
        return Errc::invalid_state_transition;
      }
      if (n > b.sample_len - b.watermark) {
        return Errc::invalid_state_transition;
      }
      b.watermark += n;
      if (b.watermark == b.sample_len) {
        b.status = BlockStatus::ready;
      }
      mirror(r, bid.start, b);
      return Status();
    });
  }

  /// One-shot completion: the whole payload is in place.
  Status mark_ready(DomainContext& ctx, const BlockId& bid, std::uint32_t sample_len) {
    return with_block(ctx, bid, [&](Region& r, Block& b) -> Status {
      if (b.status == BlockStatus::ready) {
        return Errc::invalid_state_transition;
      }
      if (sample_len == 0 || sample_len > capacity_of(r, b)) {
        return Errc::invalid_argument;
      }
      if (b.status == BlockStatus::writing && sample_len != b.sample_len) {
        return Errc::invalid_state_transition;
      }
      b.status = BlockStatus::ready;
      b.sample_len = sample_len;
      b.watermark = sample_len;
      mirror(r, bid.start, b);
      return Status();
    });
  }

  /// Hands the block to the recipient side. Blocks mid-write stay put.
  Status transfer_block(DomainContext& ctx, const BlockId& bid, Side new_owner) {
    return with_block(ctx, bid, [&](Region& r, Block& b) -> Status {
      if (b.status == BlockStatus::writing) {
        return Errc::invalid_state_transition;
      }
      b.owner = new_owner;
      mirror(r, bid.start, b);
      return Status();
    });
  }

  Status free_block(DomainContext& ctx, const BlockId& bid) {
    return with_block(ctx, bid, [&](Region& r, Block& b) -> Status {
      if (b.status == BlockStatus::writing) {
        return Errc::invalid_state_transition;
      }
      for (std::uint32_t k = bid.start; k < bid.start + b.granule_count; ++k) {
        r.used[k] = 0;
      }
      clear_mirror(r, bid.start);
      r.blocks.erase(bid.start);
      blocks_freed_.fetch_add(1, std::memory_order_relaxed);
      return Status();
    });
  }

  bool validate_offset(RegionId id, std::uint64_t offset, std::uint64_t len) const {
    std::lock_guard lock(mu_);
    const auto it = regions_.find(id);
    if (it == regions_.end() || !it->second.mapped) {
      return false;
    }
    return offset_in_range(it->second.size, offset, len);
  }

  /// Block whose payload starts at `offset`, if any.
  Result<BlockId> find_block(RegionId id, std::uint64_t offset) const {
    std::lock_guard lock(mu_);
    const Region* r = live_region(id);
    if (r == nullptr) {
      return Errc::invalid_argument;
    }
    if (!offset_in_range(r->size, offset, 1) || offset % r->granule != 0) {
      return Errc::invalid_block;
    }
    const std::uint32_t start = static_cast<std::uint32_t>(offset / r->granule);
    if (r->blocks.find(start) == r->blocks.end()) {
      return Errc::invalid_block;
    }
    return BlockId{id, start};
  }

  Result<BlockInfo> block_info(const BlockId& bid) const {
    std::lock_guard lock(mu_);
    const Region* r = live_region(bid.region);
    if (r == nullptr) {
      return Errc::invalid_argument;
    }
    const auto it = r->blocks.find(bid.start);
    if (it == r->blocks.end()) {
      return Errc::invalid_block;
    }
    const Block& b = it->second;
    BlockInfo info;
    info.offset = static_cast<std::uint64_t>(bid.start) * r->granule;
    info.capacity = capacity_of(*r, b);
    info.owner = b.owner;
    info.status = b.status;
    info.sample_len = b.sample_len;
    info.watermark = b.watermark;
    return info;
  }

  /// Raw view of the whole region for the owning process. The library
  /// never trusts anything read through this.
  std::span<std::byte> region_data(RegionId id) {
    std::lock_guard lock(mu_);
    Region* r = live_region(id);
    if (r == nullptr) {
      return {};
    }
    return std::span<std::byte>(r->data.data(), r->data.size());
  }

  /// The advisory metadata mirror: kAdvisoryStride u32 per granule,
  /// [status, owner, sample_len, watermark] at a block's start granule.
  std::span<std::atomic<std::uint32_t>> advisory_data(RegionId id) {
    std::lock_guard lock(mu_);
    Region* r = live_region(id);
    if (r == nullptr) {
      return {};
    }
    return std::span<std::atomic<std::uint32_t>>(
        r->advisory.get(), static_cast<std::size_t>(r->granule_count) * kAdvisoryStride);
  }

  /// Payload bytes of one block. The span stays valid while the block is
  /// allocated and the region mapped; region memory never moves.
  std::span<std::byte> block_bytes(const BlockId& bid) {
    std::lock_guard lock(mu_);
    Region* r = live_region(bid.region);
    if (r == nullptr) {
      return {};
    }
    const auto it = r->blocks.find(bid.start);
    if (it == r->blocks.end()) {
      return {};
    }
    const std::uint64_t off = static_cast<std::uint64_t>(bid.start) * r->granule;
    return std::span<std::byte>(r->data.data() + off, capacity_of(*r, it->second));
  }

  std::uint64_t reserved_bytes(Pid pid) const {
    std::lock_guard lock(mu_);
    const auto it = reserved_.find(pid);
    return it == reserved_.end() ? 0 : it->second;
  }

  std::uint32_t live_block_count(RegionId id) const {
    std::lock_guard lock(mu_);
    const Region* r = live_region(id);
    return r == nullptr ? 0 : static_cast<std::uint32_t>(r->blocks.size());
  }

  std::uint32_t free_granules(RegionId id) const {
    std::lock_guard lock(mu_);
    const Region* r = live_region(id);
    if (r == nullptr) {
      return 0;
    }
    std::uint32_t n = 0;
    for (const auto u : r->used) {
      n += u == 0 ? 1 : 0;
    }
    return n;
  }

  /// Full consistency scan of the authoritative metadata: blocks disjoint,
  /// in bounds, exactly covering the used-granule map, watermarks within
  /// declared lengths, lengths within capacity.
  RegionVerifyReport verify_region(RegionId id) const {
    std::lock_guard lock(mu_);
    RegionVerifyReport rep;
    const Region* r = live_region(id);
    if (r == nullptr) {
      rep.ok = false;
      rep.detail = "region not mapped";
      return rep;
    }
    std::vector<std::uint8_t> cover(r->granule_count, 0);
    for (const auto& [start, b] : r->blocks) {
      if (b.granule_count == 0 || start >= r->granule_count ||
          b.granule_count > r->granule_count - start) {
        return fail(rep, "block out of bounds", start);
      }
      for (std::uint32_t k = start; k < start + b.granule_count; ++k) {
        if (cover[k] != 0) {
          return fail(rep, "blocks overlap", k);
        }
        cover[k] = 1;
      }
      if (r->used[start] != kGranuleBlockStart) {
        return fail(rep, "start granule not marked", start);
      }
      for (std::uint32_t k = start + 1; k < start + b.granule_count; ++k) {
        if (r->used[k] != kGranuleBlockBody) {
          return fail(rep, "body granule not marked", k);
        }
      }
      if (b.sample_len > capacity_of(*r, b)) {
        return fail(rep, "sample_len beyond capacity", start);
      }
      if (b.watermark > b.sample_len) {
        return fail(rep, "watermark beyond sample_len", start);
      }
      if (b.status == BlockStatus::ready && b.watermark != b.sample_len) {
        return fail(rep, "ready block not fully written", start);
      }
    }
    for (std::uint32_t g = 0; g < r->granule_count; ++g) {
      if ((r->used[g] != 0) != (cover[g] != 0)) {
        return fail(rep, "used map does not match blocks", g);
      }
    }
    return rep;
  }

  std::uint64_t blocks_allocated() const noexcept {
    return blocks_allocated_.load(std::memory_order_relaxed);
  }
  std::uint64_t blocks_freed() const noexcept {
    return blocks_freed_.load(std::memory_order_relaxed);
  }
  std::uint64_t alloc_failures() const noexcept {
    return alloc_failures_.load(std::memory_order_relaxed);
  }
  std::uint64_t unmap_denied() const noexcept {
    return unmap_denied_.load(std::memory_order_relaxed);
  }

  static constexpr std::size_t kAdvisoryStride = 4;

 private:
  static constexpr std::uint8_t kGranuleBlockStart = 1;
  static constexpr std::uint8_t kGranuleBlockBody = 2;

  struct Block {
    std::uint32_t granule_count = 0;
    Side owner = Side::application;
    BlockStatus status = BlockStatus::empty;
    std::uint32_t sample_len = 0;
    std::uint32_t watermark = 0;
  };

  struct Region {
    Pid owner = 0;
    std::uint64_t size = 0;
    std::uint32_t granule = 0;
    std::uint32_t granule_count = 0;
    bool mapped = false;
    bool app_writable = true;
    std::vector<std::byte> data;
    std::unique_ptr<std::atomic<std::uint32_t>[]> advisory;
    std::vector<std::uint8_t> used;
    std::map<std::uint32_t, Block> blocks;
  };

  static std::uint64_t capacity_of(const Region& r, const Block& b) noexcept {
    return static_cast<std::uint64_t>(b.granule_count) * r.granule;
  }

  Region* live_region(RegionId id) {
    auto it = regions_.find(id);
    return it != regions_.end() && it->second.mapped ? &it->second : nullptr;
  }
  const Region* live_region(RegionId id) const {
    auto it = regions_.find(id);
    return it != regions_.end() && it->second.mapped ? &it->second : nullptr;
  }

  template <typename F>
  Status with_block(DomainContext& ctx, const BlockId& bid, F&& fn) {
    if (ctx.mode() != ExecMode::library) {
      ctx.runtime().count_context_violation();
      return Errc::context_violation;
    }
    std::lock_guard lock(mu_);
    Region* r = live_region(bid.region);
    if (r == nullptr) {
      return Errc::invalid_argument;
    }
    auto it = r->blocks.find(bid.start);
    if (it == r->blocks.end()) {
      return Errc::invalid_block;
    }
    return fn(*r, it->second);
  }

  void mirror(Region& r, std::uint32_t start, const Block& b) {
    auto* adv = r.advisory.get() + static_cast<std::size_t>(start) * kAdvisoryStride;
    adv[0].store(static_cast<std::uint32_t>(b.status), std::memory_order_relaxed);
    adv[1].store(static_cast<std::uint32_t>(b.owner), std::memory_order_relaxed);
    adv[2].store(b.sample_len, std::memory_order_relaxed);
    adv[3].store(b.watermark, std::memory_order_relaxed);
  }

  void clear_mirror(Region& r, std::uint32_t start) {
    auto* adv = r.advisory.get() + static_cast<std::size_t>(start) * kAdvisoryStride;
    for (std::size_t i = 0; i < kAdvisoryStride; ++i) {
      adv[i].store(0, std::memory_order_relaxed);
    }
  }

  static RegionVerifyReport fail(RegionVerifyReport& rep, const char* what, std::uint32_t where) {
    std::ostringstream os;
    os << what << " at granule " << where;
    rep.ok = false;
    rep.detail = os.str();
    return rep;
  }

  Runtime& rt_;
  mutable std::mutex mu_;
  RegionId next_region_id_ = 1;
  std::map<RegionId, Region> regions_;
  std::unordered_map<Pid, std::uint64_t> reserved_;
  std::unordered_map<Pid, RegionId> primary_;
  std::atomic<std::uint64_t> blocks_allocated_{0};
  std::atomic<std::uint64_t> blocks_freed_{0};
  std::atomic<std::uint64_t> alloc_failures_{0};
  std::atomic<std::uint64_t> unmap_denied_{0};
};

}  // namespace domainbus

#endif  // DOMAINBUS__PERMANENT_BUFFERS_HPP_
