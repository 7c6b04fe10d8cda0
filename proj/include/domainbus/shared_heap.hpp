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

#ifndef DOMAINBUS__SHARED_HEAP_HPP_
#define DOMAINBUS__SHARED_HEAP_HPP_

#include <cstdint>
#include <functional>
#include <mutex>
#include <type_traits>
#include <utility>
#include <vector>

#include "domainbus/errors.hpp"
#include "domainbus/runtime.hpp"

namespace domainbus {

enum class EntityKind : std::uint8_t {
  participant = 0,
  topic,
  writer,
  reader,
  waitset,
  sample,
};
inline constexpr std::size_t kEntityKindCount = 6;

inline const char* entity_kind_name(EntityKind k) noexcept {
  switch (k) {
    case EntityKind::participant: return "participant";
    case EntityKind::topic: return "topic";
    case EntityKind::writer: return "writer";
    case EntityKind::reader: return "reader";
    case EntityKind::waitset: return "waitset";
    case EntityKind::sample: return "sample";
  }
  return "unknown";
}

/// Generation-checked handle to a protected heap entity. Descriptors are
/// the only reference Application code ever holds; freeing a slot bumps
/// its generation, so stale handles fail closed instead of aliasing
/// whatever the slot holds next.
struct Descriptor {
  EntityKind kind = EntityKind::participant;
  std::uint32_t index = 0;
  std::uint32_t generation = 0;  // 0 never resolves: live slots start at 1

  bool operator==(const Descriptor&) const = default;
  bool valid() const noexcept { return generation != 0; }
};

/// Shared bookkeeping prefix of every heap slot.
struct EntityHeader {
  Pid owner = 0;
  std::uint32_t generation = 0;
  bool occupied = false;
  std::uint32_t refcount = 0;  // samples: outstanding local receipts + history pins
  std::uint32_t hold = 0;      // samples: unacked networked peers
};

/// Move-only proof that the heap mutex is held. Every heap operation takes
/// one, which lets Bus-level compound operations stay atomic without a
/// recursive lock and without trusting callers to remember.
class HeapLock {
 public:
  explicit HeapLock(std::mutex& mu) : lk_(mu) {}
  HeapLock(HeapLock&&) = default;
  HeapLock& operator=(HeapLock&&) = default;

 private:
  std::unique_lock<std::mutex> lk_;
};

/// Fixed-capacity slot tables for the six entity kinds, generation checks,
/// sample refcounts, and per-process reclamation primitives. Payload types
/// are supplied by the layer above; each must be default-constructible and
/// provide `void reset()` for slot reuse.
template <typename ParticipantT, typename TopicT, typename WriterT, typename ReaderT,
          typename WaitsetT, typename SampleT>
class BasicHeap {
 private:
  template <typename T>
  struct Slot {
    EntityHeader header;
    T payload;
  };

  template <EntityKind K>
  using payload_t = std::conditional_t<
      K == EntityKind::participant, ParticipantT,
      std::conditional_t<
          K == EntityKind::topic, TopicT,
          std::conditional_t<
              K == EntityKind::writer, WriterT,
              std::conditional_t<K == EntityKind::reader, ReaderT,
                                 std::conditional_t<K == EntityKind::waitset, WaitsetT,
                                                    SampleT>>>>>;

 public:
  /// Runs when a sample's refcount and network hold both reach zero, with
  /// the heap lock held; releases the backing transfer block.
  using SampleFreeHook = std::function<void(SampleT&)>;

  explicit BasicHeap(Runtime& rt, SampleFreeHook on_sample_free = {})
      : rt_(rt),
        capacity_(rt.config().heap_slots_per_kind),
        on_sample_free_(std::move(on_sample_free)),
        participants_(capacity_),
        topics_(capacity_),
        writers_(capacity_),
        readers_(capacity_),
        waitsets_(capacity_),
        samples_(capacity_) {}

  BasicHeap(const BasicHeap&) = delete;
  BasicHeap& operator=(const BasicHeap&) = delete;

  HeapLock lock() { return HeapLock(mu_); }

  std::uint32_t capacity() const noexcept { return capacity_; }

  std::uint32_t occupied(const HeapLock&, EntityKind kind) const {
    return counts_[static_cast<std::size_t>(kind)];
  }

  Result<Descriptor> allocate(const HeapLock&, EntityKind kind, Pid owner) {
    if (!rt_.is_alive(owner)) {
      return Errc::unknown_pid;
    }
    return dispatch(kind, [&](auto& slots) { return allocate_in(slots, kind, owner); });
  }

  /// Frees a live slot. Samples still pinned by receipts or unacked peers
  /// cannot be freed directly; they drain through release_sample. Freeing
  /// a sample releases its backing storage, whatever path got here.
  Status free_entity(const HeapLock&, const Descriptor& d) {
    if (d.kind == EntityKind::sample) {
      auto* slot = live_slot(samples_, d);
      if (slot == nullptr) {
        return Errc::stale_descriptor;
      }
      if (slot->header.refcount > 0 || slot->header.hold > 0) {
        return Errc::invalid_state_transition;
      }
      if (on_sample_free_) {
        on_sample_free_(slot->payload);
      }
      free_slot(samples_, d);
      return Status();
    }
    return dispatch(d.kind, [&](auto& slots) -> Status {
      auto* slot = live_slot(slots, d);
      if (slot == nullptr) {
        return Errc::stale_descriptor;
      }
      free_slot(slots, d);
      return Status();
    });
  }

  /// Validates a descriptor exactly as resolve() does, without exposing
  /// the payload.
  Status check(const HeapLock& lk, const Descriptor& d, EntityKind expected, Pid caller,
               bool ownership_required) {
    return resolve_header(lk, d, expected, caller, ownership_required).status();
  }

  /// Resolves a descriptor to its payload. Checks, in order: the expected
  /// kind, slot liveness and generation, then (optionally) that the caller
  /// owns the entity and is itself still alive. A dead pid never validates
  /// ownership, even for its own entities.
  template <EntityKind K>
  Result<payload_t<K>*> resolve(const HeapLock& lk, const Descriptor& d, Pid caller,
                                bool ownership_required) {
    auto hdr = resolve_header(lk, d, K, caller, ownership_required);
    if (!hdr.ok()) {
      return hdr.error();
    }
    return &table<K>()[d.index].payload;
  }

  /// Header peek for tests and reclamation policy. Null when stale.
  const EntityHeader* header(const HeapLock&, const Descriptor& d) {
    return dispatch(d.kind, [&](auto& slots) -> const EntityHeader* {
      auto* slot = live_slot(slots, d);
      return slot == nullptr ? nullptr : &slot->header;
    });
  }

  /// Adds `n` references in one step; delivery to k readers retains once.
  Result<std::uint32_t> retain_sample(const HeapLock&, const Descriptor& d, std::uint32_t n) {
    auto* slot = sample_slot(d);
    if (slot == nullptr) {
      return Errc::stale_descriptor;
    }
    slot->header.refcount += n;
    return slot->header.refcount;
  }

  /// Drops one reference. At zero references and zero network hold the
  /// sample's storage is released and the slot freed. Returns the
  /// remaining count.
  Result<std::uint32_t> release_sample(const HeapLock&, const Descriptor& d) {
    auto* slot = sample_slot(d);
    if (slot == nullptr) {
      return Errc::stale_descriptor;
    }
    if (slot->header.refcount == 0) {
      return Errc::underflow_violation;
    }
    --slot->header.refcount;
    const std::uint32_t remaining = slot->header.refcount;
    maybe_free_sample(d);
    return remaining;
  }

  Result<std::uint32_t> add_network_hold(const HeapLock&, const Descriptor& d, std::uint32_t n) {
    auto* slot = sample_slot(d);
    if (slot == nullptr) {
      return Errc::stale_descriptor;
    }
    slot->header.hold += n;
    return slot->header.hold;
  }

  Result<std::uint32_t> release_network_hold(const HeapLock&, const Descriptor& d) {
    auto* slot = sample_slot(d);
    if (slot == nullptr) {
      return Errc::stale_descriptor;
    }
    if (slot->header.hold == 0) {
      return Errc::underflow_violation;
    }
    --slot->header.hold;
    const std::uint32_t remaining = slot->header.hold;
    maybe_free_sample(d);
    return remaining;
  }

  /// Iterates live slots of one kind; fn(Descriptor, EntityHeader&, payload&).
  template <EntityKind K, typename F>
  void for_each(const HeapLock&, F&& fn) {
    auto& slots = table<K>();
    for (std::uint32_t i = 0; i < capacity_; ++i) {
      if (slots[i].header.occupied) {
        fn(Descriptor{K, i, slots[i].header.generation}, slots[i].header, slots[i].payload);
      }
    }
  }

  template <EntityKind K, typename F>
  void for_each_owned(const HeapLock& lk, Pid owner, F&& fn) {
    for_each<K>(lk, [&](const Descriptor& d, EntityHeader& h, auto& p) {
      if (h.owner == owner) {
        fn(d, h, p);
      }
    });
  }

 private:
  template <typename F>
  auto dispatch(EntityKind kind, F&& fn) {
    switch (kind) {
      case EntityKind::participant: return fn(participants_);
      case EntityKind::topic: return fn(topics_);
      case EntityKind::writer: return fn(writers_);
      case EntityKind::reader: return fn(readers_);
      case EntityKind::waitset: return fn(waitsets_);
      case EntityKind::sample: return fn(samples_);
    }
    return fn(participants_);
  }

  template <typename SlotVec>
  Result<Descriptor> allocate_in(SlotVec& slots, EntityKind kind, Pid owner) {
    for (std::uint32_t i = 0; i < capacity_; ++i) {
      auto& slot = slots[i];
      if (!slot.header.occupied) {
        slot.header.owner = owner;
        slot.header.occupied = true;
        ++slot.header.generation;
        slot.header.refcount = 0;
        slot.header.hold = 0;
        slot.payload.reset();
        ++counts_[static_cast<std::size_t>(kind)];
        return Descriptor{kind, i, slot.header.generation};
      }
    }
    return Errc::heap_exhausted;
  }

  template <typename SlotVec>
  auto live_slot(SlotVec& slots, const Descriptor& d) -> decltype(&slots[0]) {
    if (d.index >= capacity_) {
      return nullptr;
    }
    auto& slot = slots[d.index];
    if (!slot.header.occupied || slot.header.generation != d.generation) {
      return nullptr;
    }
    return &slot;
  }

  Slot<SampleT>* sample_slot(const Descriptor& d) {
    return d.kind == EntityKind::sample ? live_slot(samples_, d) : nullptr;
  }

  template <typename SlotVec>
  void free_slot(SlotVec& slots, const Descriptor& d) {
    auto& slot = slots[d.index];
    slot.header.occupied = false;
    ++slot.header.generation;
    slot.header.owner = 0;
    slot.header.refcount = 0;
    slot.header.hold = 0;
    --counts_[static_cast<std::size_t>(d.kind)];
  }

  Result<EntityHeader*> resolve_header(const HeapLock&, const Descriptor& d, EntityKind expected,
                                       Pid caller, bool ownership_required) {
    if (d.kind != expected) {
      return Errc::kind_mismatch;
    }
    return dispatch(d.kind, [&](auto& slots) -> Result<EntityHeader*> {
      auto* slot = live_slot(slots, d);
      if (slot == nullptr) {
        return Errc::stale_descriptor;
      }
      if (ownership_required &&
          (slot->header.owner != caller || !rt_.is_alive(slot->header.owner))) {
        return Errc::ownership_violation;
      }
      return &slot->header;
    });
  }

  void maybe_free_sample(const Descriptor& d) {
    auto* slot = live_slot(samples_, d);
    if (slot == nullptr) {
      return;
    }
    if (slot->header.refcount == 0 && slot->header.hold == 0) {
      if (on_sample_free_) {
        on_sample_free_(slot->payload);
      }
      free_slot(samples_, d);
    }
  }

  template <EntityKind K>
  std::vector<Slot<payload_t<K>>>& table() {
    if constexpr (K == EntityKind::participant) {
      return participants_;
    } else if constexpr (K == EntityKind::topic) {
      return topics_;
    } else if constexpr (K == EntityKind::writer) {
      return writers_;
    } else if constexpr (K == EntityKind::reader) {
      return readers_;
    } else if constexpr (K == EntityKind::waitset) {
      return waitsets_;
    } else {
      return samples_;
    }
  }

  Runtime& rt_;
  std::uint32_t capacity_;
  SampleFreeHook on_sample_free_;
  std::mutex mu_;
  std::uint32_t counts_[kEntityKindCount] = {};
  std::vector<Slot<ParticipantT>> participants_;
  std::vector<Slot<TopicT>> topics_;
  std::vector<Slot<WriterT>> writers_;
  std::vector<Slot<ReaderT>> readers_;
  std::vector<Slot<WaitsetT>> waitsets_;
  std::vector<Slot<SampleT>> samples_;
};

}  // namespace domainbus

#endif  // DOMAINBUS__SHARED_HEAP_HPP_
