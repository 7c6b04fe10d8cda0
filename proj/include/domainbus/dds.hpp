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

#ifndef DOMAINBUS__DDS_HPP_
#define DOMAINBUS__DDS_HPP_

#include <atomic>
#include <cstdint>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "domainbus/clock.hpp"
#include "domainbus/config.hpp"
#include "domainbus/errors.hpp"
#include "domainbus/permanent_buffers.hpp"
#include "domainbus/reliability.hpp"
#include "domainbus/runtime.hpp"
#include "domainbus/shared_heap.hpp"
#include "domainbus/transport.hpp"
#include "domainbus/wait_notify.hpp"
#include "domainbus/wire.hpp"

namespace domainbus {

enum class Reliability : std::uint8_t { best_effort, reliable };
enum class History : std::uint8_t { keep_all, keep_last };
enum class Durability : std::uint8_t { volatile_local, transient_local };

/// Topic-level QoS; endpoints must request the exact same profile.
struct QosProfile {
  Reliability reliability = Reliability::reliable;
  History history = History::keep_all;
  std::uint32_t depth = 0;  // keep_last only
  Durability durability = Durability::volatile_local;

  bool operator==(const QosProfile&) const = default;
};

/// Application-visible name of a transfer block: the owning process and
/// the block's byte offset in that process's primary region.
struct BlockRef {
  Pid owner = 0;
  std::uint64_t offset = 0;

  bool operator==(const BlockRef&) const = default;
};

/// One delivered sample, as queued to a reader.
struct MessageReceipt {
  Descriptor topic;
  Descriptor sample;
  BlockRef block;  // zero for network-received samples
  std::uint64_t sequence = 0;
  std::uint32_t sample_len = 0;
  std::int64_t timestamp_ns = 0;
};

struct TakenSample {
  std::uint64_t sequence = 0;
  std::uint32_t len = 0;
  std::int64_t timestamp_ns = 0;
  std::uint32_t writer_id = 0;  // wire id of the producing writer
};

/// Bounded receipt ring with drop-oldest (best effort) or reject-new
/// (reliable backpressure) overflow. The atomic size lets fast paths and
/// delivery spins read it without the lock. Closed queues refuse pushes;
/// reclamation closes a dead reader's queue so late deliverers see the
/// refusal and drop their retain.
class ReceiptQueue {
 public:
  struct PushOutcome {
    bool accepted = false;
    bool displaced = false;
    MessageReceipt displaced_receipt;
  };

  void configure(std::uint32_t capacity) {
    std::lock_guard lock(mu_);
    cap_ = capacity;
    closed_ = false;
    q_.clear();
    len_.store(0, std::memory_order_release);
  }

  PushOutcome push(const MessageReceipt& r, bool drop_oldest_on_full) {
    PushOutcome out;
    std::lock_guard lock(mu_);
    if (closed_) {
      return out;
    }
    if (q_.size() >= cap_) {
      if (!drop_oldest_on_full) {
        return out;
      }
      out.displaced = true;
      out.displaced_receipt = q_.front();
      q_.pop_front();
    }
    q_.push_back(r);
    out.accepted = true;
    len_.store(static_cast<std::uint32_t>(q_.size()), std::memory_order_release);
    return out;
  }

  std::optional<MessageReceipt> pop() {
    std::lock_guard lock(mu_);
    if (q_.empty()) {
      return std::nullopt;
    }
    MessageReceipt r = q_.front();
    q_.pop_front();
    len_.store(static_cast<std::uint32_t>(q_.size()), std::memory_order_release);
    return r;
  }

  std::vector<MessageReceipt> drain_and_close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    std::vector<MessageReceipt> out(q_.begin(), q_.end());
    q_.clear();
    len_.store(0, std::memory_order_release);
    return out;
  }

  std::uint32_t size() const noexcept { return len_.load(std::memory_order_acquire); }

  std::uint32_t capacity() const {
    std::lock_guard lock(mu_);
    return cap_;
  }

 private:
  mutable std::mutex mu_;
  std::deque<MessageReceipt> q_;
  std::uint32_t cap_ = 0;
  bool closed_ = true;
  std::atomic<std::uint32_t> len_{0};
};

// entity payloads

struct ParticipantRec {
  void reset() {}
};

struct TopicRec {
  std::string name;
  std::uint32_t max_sample_len = 0;
  QosProfile qos;
  std::uint32_t wire_id = 0;      // derived from the name; same on every instance
  std::uint32_t sub_wire_id = 0;  // this instance's subscriber identity
  std::vector<Descriptor> writers;
  std::vector<Descriptor> readers;
  std::vector<Endpoint> peers;  // remote instances subscribed to this topic

  void reset() { *this = TopicRec{}; }
};

struct WriterRec {
  Descriptor topic;
  Descriptor participant;
  std::uint32_t wire_id = 0;
  std::uint64_t next_seq = 1;
  std::deque<std::pair<std::uint64_t, Descriptor>> history;  // transient_local pins
  WriterReliability net;
  std::int64_t last_hb_ns = 0;
  std::uint32_t hb_count = 0;

  void reset() { *this = WriterRec{}; }
};

struct ReaderRec {
  Descriptor topic;
  Descriptor participant;
  ReceiptQueue queue;
  std::atomic<std::uint32_t> inflight{0};  // deliveries between notify and append
  std::vector<Descriptor> waitsets;

  void reset() {
    topic = {};
    participant = {};
    inflight.store(0, std::memory_order_relaxed);
    waitsets.clear();
  }
};

struct WaitsetRec {
  Descriptor participant;
  std::vector<Descriptor> readers;
  WaitWord word;  // the word's counter survives slot reuse harmlessly

  void reset() {
    participant = {};
    readers.clear();
  }
};

struct SampleRec {
  Descriptor topic;
  std::uint64_t sequence = 0;
  std::uint32_t writer_wire_id = 0;
  std::uint32_t len = 0;
  std::int64_t timestamp_ns = 0;
  bool region_backed = false;
  BlockId block;      // when region_backed
  BlockRef block_ref; // app-visible name of the block
  std::vector<std::byte> buffer;        // network-received payload
  std::atomic<std::uint32_t> filled{0}; // payload bytes in place; readers chase this

  void reset() {
    topic = {};
    sequence = 0;
    writer_wire_id = 0;
    len = 0;
    timestamp_ns = 0;
    region_backed = false;
    block = {};
    block_ref = {};
    if (buffer.capacity() > (256u << 10)) {
      buffer = {};
    } else {
      buffer.clear();
    }
    filled.store(0, std::memory_order_relaxed);
  }
};

struct BusStats {
  std::uint64_t writes = 0;
  std::uint64_t samples_taken = 0;
  std::uint64_t copies = 0;
  std::uint64_t deliveries = 0;  // (sample, reader) receipt appends
  std::uint64_t eager_notifies = 0;
  std::uint64_t lazy_notifies = 0;
  std::uint64_t backpressure_rejections = 0;
  std::uint64_t best_effort_displaced = 0;
  std::uint64_t heartbeats_sent = 0;      // per writer tick
  std::uint64_t heartbeat_datagrams = 0;  // per peer
  std::uint64_t acknacks_sent = 0;
  std::uint64_t retransmit_datagrams = 0;
  std::uint64_t duplicates_dropped = 0;
  std::uint64_t rx_data = 0;
  std::uint64_t rx_frags = 0;
  std::uint64_t rx_malformed = 0;
  std::uint64_t rx_deferred = 0;  // reliable data refused for backpressure, renacked later
  std::uint64_t rx_unknown_topic = 0;
  std::uint64_t frag_mismatches = 0;
  std::uint64_t net_samples_delivered = 0;
  std::uint64_t samples_parked = 0;
  std::uint64_t take_spins = 0;
  std::uint64_t fast_path_hits = 0;
  std::uint64_t fast_path_misses = 0;
  std::uint64_t reclaimed_entities = 0;
};

/// Timeline of one (sample, reader) delivery for ordering checks.
struct DeliveryTrace {
  std::uint64_t sequence = 0;
  std::uint32_t reader_index = 0;
  std::int64_t notify_ns = 0;  // 0 when no waitset was attached
  std::int64_t append_ns = 0;
};

/// The publish-subscribe engine: entity management, the single-copy local
/// data path, and the wire-protocol endpoint the daemon drives.
///
/// Locking: rx_mu_ (serializes packet processing) is taken first when
/// present, then the protected-heap lock; region-table and queue/word
/// locks nest inside the heap lock and never the other way around.
/// Reader-side network state (reassembly, ordering, parked payloads) is
/// only touched under rx_mu_, so any thread may share rx work.
class Bus {
 public:
  using Heap = BasicHeap<ParticipantRec, TopicRec, WriterRec, ReaderRec, WaitsetRec, SampleRec>;

  explicit Bus(Config cfg = {})
      : cfg_(cfg),
        rt_(cfg),
        regions_(rt_),
        heap_(rt_, [this](SampleRec& s) { release_sample_storage(s); }),
        pending_(std::make_unique<std::atomic<std::uint32_t>[]>(cfg.heap_slots_per_kind)),
        system_identity_(rt_.register_process()),
        system_ctx_(rt_, system_identity_, true),
        guid_(wire::make_guid(cfg.net.seed * 1000003ull + next_instance_salt())) {
    for (std::uint32_t i = 0; i < cfg.heap_slots_per_kind; ++i) {
      pending_[i].store(0, std::memory_order_relaxed);
    }
    // Internal context for storage release on arbitrary call paths; it
    // stays in Library mode for the life of the bus.
    (void)system_ctx_.enter_library();
  }

  Bus(const Bus&) = delete;
  Bus& operator=(const Bus&) = delete;

  const Config& config() const noexcept { return cfg_; }
  Runtime& runtime() noexcept { return rt_; }
  RegionTable& regions() noexcept { return regions_; }
  Heap& heap() noexcept { return heap_; }
  const wire::GuidPrefix& guid() const noexcept { return guid_; }

  void set_transport(Transport& t) { transport_ = &t; }
  Transport* transport() const noexcept { return transport_; }

  ProcessIdentity register_process() { return rt_.register_process(); }

  Status deregister_process(DomainContext& ctx) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    return call.finish_with(rt_.deregister_process(ctx.pid()));
  }

  // -- entity creation ------------------------------------------------

  Result<Descriptor> create_participant(DomainContext& ctx) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    auto region = regions_.primary_region(ctx);  // map transfer memory up front
    if (!region.ok()) {
      return call.finish_with(Result<Descriptor>(region.error()));
    }
    auto lk = heap_.lock();
    return call.finish_with(heap_.allocate(lk, EntityKind::participant, ctx.pid()));
  }

  Result<Descriptor> create_topic(DomainContext& ctx, const Descriptor& participant,
                                  std::string_view name, std::uint32_t max_sample_len,
                                  const QosProfile& qos) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    return call.finish_with(create_topic_impl(ctx, participant, name, max_sample_len, qos));
  }

  Result<Descriptor> create_writer(DomainContext& ctx, const Descriptor& participant,
                                   const Descriptor& topic, const QosProfile& qos) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    return call.finish_with(create_endpoint_impl(ctx, participant, topic, qos, true));
  }

  Result<Descriptor> create_reader(DomainContext& ctx, const Descriptor& participant,
                                   const Descriptor& topic, const QosProfile& qos) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    return call.finish_with(create_endpoint_impl(ctx, participant, topic, qos, false));
  }

  Result<Descriptor> create_waitset(DomainContext& ctx, const Descriptor& participant,
                                    std::span<const Descriptor> readers) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    return call.finish_with(create_waitset_impl(ctx, participant, readers));
  }

  Status add_remote_peer(DomainContext& ctx, const Descriptor& topic, Endpoint peer) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    auto lk = heap_.lock();
    auto tp = heap_.resolve<EntityKind::topic>(lk, topic, ctx.pid(), false);
    if (!tp.ok()) {
      return call.finish_with(Status(tp.error()));
    }
    auto& peers = tp.value()->peers;
    bool known = false;
    for (const auto& p : peers) {
      known = known || p == peer;
    }
    if (!known) {
      peers.push_back(peer);
    }
    return call.finish_with(Status());
  }

  Result<Descriptor> lookup_topic(DomainContext& ctx, std::string_view name) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    auto lk = heap_.lock();
    auto it = topics_by_name_.find(std::string(name));
    if (it == topics_by_name_.end()) {
      return call.finish_with(Result<Descriptor>(Errc::invalid_argument));
    }
    return call.finish_with(Result<Descriptor>(it->second));
  }

  // -- transfer blocks -------------------------------------------------

  Result<BlockRef> alloc_block(DomainContext& ctx, std::uint64_t capacity_bytes) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    return call.finish_with(alloc_block_impl(ctx, capacity_bytes));
  }

  Status begin_block_write(DomainContext& ctx, const BlockRef& ref, std::uint32_t len) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    auto bid = resolve_own_block(ctx, ref);
    if (!bid.ok()) {
      return call.finish_with(Status(bid.error()));
    }
    return call.finish_with(regions_.begin_write(ctx, bid.value(), len));
  }

  Status advance_block(DomainContext& ctx, const BlockRef& ref, std::uint32_t n) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    auto bid = resolve_own_block(ctx, ref);
    if (!bid.ok()) {
      return call.finish_with(Status(bid.error()));
    }
    return call.finish_with(regions_.advance_watermark(ctx, bid.value(), n));
  }

  Status block_ready(DomainContext& ctx, const BlockRef& ref, std::uint32_t len) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    auto bid = resolve_own_block(ctx, ref);
    if (!bid.ok()) {
      return call.finish_with(Status(bid.error()));
    }
    return call.finish_with(regions_.mark_ready(ctx, bid.value(), len));
  }

  Status free_app_block(DomainContext& ctx, const BlockRef& ref) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    auto bid = resolve_own_block(ctx, ref);
    if (!bid.ok()) {
      return call.finish_with(Status(bid.error()));
    }
    auto info = regions_.block_info(bid.value());
    if (!info.ok()) {
      return call.finish_with(Status(info.error()));
    }
    if (info.value().owner != Side::application) {
      return call.finish_with(Status(Errc::ownership_violation));
    }
    return call.finish_with(regions_.free_block(ctx, bid.value()));
  }

  /// Raw bytes of one of the caller's own blocks, usable from Application
  /// mode. The library never trusts content written through this view.
  std::span<std::byte> block_data(DomainContext& ctx, const BlockRef& ref) {
    if (ref.owner != ctx.pid()) {
      return {};
    }
    const auto region = regions_.primary_of(ref.owner);
    if (!region.has_value()) {
      return {};
    }
    auto bid = regions_.find_block(*region, ref.offset);
    if (!bid.ok()) {
      return {};
    }
    return regions_.block_bytes(bid.value());
  }

  // -- data path --------------------------------------------------------

  Result<std::uint64_t> write(DomainContext& ctx, const Descriptor& writer,
                              const BlockRef& block_ref, std::uint32_t len) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    return call.finish_with(write_impl(ctx, writer, block_ref, len));
  }

  Result<std::vector<TakenSample>> take(DomainContext& ctx, const Descriptor& reader,
                                        std::span<const BlockRef> dest, std::uint32_t max) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    return call.finish_with(take_impl(ctx, reader, dest, max));
  }

  /// Application-side readiness hint: true when the reader's advisory
  /// pending count is nonzero. No protection crossing, no generation
  /// check; false positives are possible (stale slot reuse), but after a
  /// completed delivery it never reports false.
  bool take_fast_path(DomainContext&, const Descriptor& reader) {
    if (reader.kind != EntityKind::reader || reader.index >= cfg_.heap_slots_per_kind) {
      return false;
    }
    const bool hit = pending_[reader.index].load(std::memory_order_acquire) > 0;
    auto& c = hit ? c_fast_hits_ : c_fast_misses_;
    c.fetch_add(1, std::memory_order_relaxed);
    return hit;
  }

  /// Blocks the calling Application thread until any attached reader has
  /// receipts, or the timeout expires (empty result). The sleep itself
  /// happens outside the library on the waitset's wait word.
  Result<std::vector<Descriptor>> waitset_wait(DomainContext& ctx, const Descriptor& waitset,
                                               std::int64_t timeout_ns) {
    if (ctx.mode() != ExecMode::application) {
      rt_.count_context_violation();
      return Errc::context_violation;
    }
    const std::int64_t deadline = timeout_ns < 0 ? -1 : mono_now_ns() + timeout_ns;
    while (true) {
      WaitDirective directive;
      std::vector<Descriptor> ready;
      bool inflight_seen = false;
      std::vector<ReaderRec*> watch;
      {
        LibraryCall call(ctx);
        if (!call.ok()) {
          return call.enter_error();
        }
        auto lk = heap_.lock();
        auto ws = heap_.resolve<EntityKind::waitset>(lk, waitset, ctx.pid(), true);
        if (!ws.ok()) {
          return call.finish_with(Result<std::vector<Descriptor>>(ws.error()));
        }
        // Snapshot the wait word before scanning: any delivery that lands
        // after this point changes the word, so the later sleep refuses.
        auto dir = WaitOps::prepare_wait(ctx, ws.value()->word);
        if (!dir.ok()) {
          return call.finish_with(Result<std::vector<Descriptor>>(dir.error()));
        }
        directive = dir.value();
        for (const auto& rd : ws.value()->readers) {
          auto rr = heap_.resolve<EntityKind::reader>(lk, rd, ctx.pid(), false);
          if (!rr.ok()) {
            continue;  // reader torn down; skip
          }
          if (rr.value()->queue.size() > 0) {
            ready.push_back(rd);
          } else if (rr.value()->inflight.load(std::memory_order_acquire) > 0) {
            inflight_seen = true;
            watch.push_back(rr.value());
          }
        }
        Status s = call.finish();
        if (!s.ok()) {
          return s.error();
        }
      }
      if (!ready.empty()) {
        return ready;
      }
      if (inflight_seen) {
        // A delivery is mid-flight; its appends complete within the
        // deliverer's bounded call. Spin it out instead of sleeping.
        spin_while_inflight(watch);
        continue;
      }
      std::int64_t remaining = -1;
      if (deadline >= 0) {
        remaining = deadline - mono_now_ns();
        if (remaining <= 0) {
          return std::vector<Descriptor>{};
        }
      }
      auto out = WaitOps::wait_outside(ctx, directive, remaining);
      if (!out.ok()) {
        return out.error();
      }
      if (out.value() == WaitOutcome::timed_out) {
        return std::vector<Descriptor>{};
      }
      // woken or value changed: rescan
    }
  }

  // -- daemon surface ---------------------------------------------------

  Result<std::uint32_t> process_rx_batch(DomainContext& ctx, std::span<Datagram> batch) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    // Any Library-mode thread that polled may process packets; the rx
    // reliability state is serialized here. Taken before the heap lock,
    // never after.
    std::lock_guard rx_lock(rx_mu_);
    std::uint32_t handled = 0;
    for (auto& dg : batch) {
      auto msg = wire::decode_message(dg.bytes);
      if (!msg.ok()) {
        c_rx_malformed_.fetch_add(1, std::memory_order_relaxed);
        continue;
      }
      for (auto& sub : msg.value().subs) {
        if (auto* d = std::get_if<wire::DataSub>(&sub)) {
          handle_data(ctx, dg.src, msg.value().guid, std::move(*d));
        } else if (auto* f = std::get_if<wire::DataFragSub>(&sub)) {
          handle_frag(ctx, dg.src, msg.value().guid, std::move(*f));
        } else if (auto* h = std::get_if<wire::HeartbeatSub>(&sub)) {
          handle_heartbeat(ctx, dg.src, msg.value().guid, *h);
        } else if (auto* a = std::get_if<wire::AckNackSub>(&sub)) {
          handle_acknack(ctx, dg.src, *a);
        }
      }
      ++handled;
    }
    sweep_reassembly(mono_now_ns());
    return call.finish_with(Result<std::uint32_t>(handled));
  }

  /// Sends heartbeats for every reliable writer with remote peers whose
  /// period has elapsed. Returns how many writers heartbeated.
  Result<std::uint32_t> send_due_heartbeats(DomainContext& ctx, std::int64_t now_ns) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    auto lk = heap_.lock();
    std::uint32_t sent = 0;
    heap_.for_each<EntityKind::writer>(lk, [&](const Descriptor&, EntityHeader&, WriterRec& w) {
      auto tp = heap_.resolve<EntityKind::topic>(lk, w.topic, ctx.pid(), false);
      if (!tp.ok()) {
        return;
      }
      TopicRec& topic = *tp.value();
      if (topic.peers.empty() || topic.qos.reliability != Reliability::reliable) {
        return;
      }
      if (now_ns - w.last_hb_ns < cfg_.heartbeat_period_ns) {
        return;
      }
      // Advance on the writer's own period grid: anchoring to `now_ns`
      // would let caller tick jitter skip beats (due only when this
      // tick's lateness exceeds the last one's). Re-anchor when more
      // than a period behind so a stalled caller cannot cause a burst.
      w.last_hb_ns += cfg_.heartbeat_period_ns;
      if (now_ns - w.last_hb_ns >= cfg_.heartbeat_period_ns) {
        w.last_hb_ns = now_ns;
      }
      ++w.hb_count;
      wire::HeartbeatSub hb;
      hb.topic_id = topic.wire_id;
      hb.writer_id = w.wire_id;
      const auto [first, last] = w.net.heartbeat_range();
      hb.first = first;
      hb.last = last;
      hb.count = w.hb_count;
      wire::Message msg;
      msg.guid = guid_;
      msg.subs.emplace_back(hb);
      auto bytes = wire::encode_message(msg);
      if (bytes.ok() && transport_ != nullptr) {
        for (const auto& peer : topic.peers) {
          (void)transport_->send(peer, bytes.value());
          c_hb_datagrams_.fetch_add(1, std::memory_order_relaxed);
        }
      }
      ++sent;
      c_heartbeats_.fetch_add(1, std::memory_order_relaxed);
    });
    return call.finish_with(Result<std::uint32_t>(sent));
  }

  /// Frees everything owned by processes that deregistered since the last
  /// pass. Returns entities freed.
  Result<std::uint32_t> reclaim_terminated(DomainContext& ctx) {
    std::uint32_t freed = 0;
    for (const Pid pid : rt_.drain_termination_queue()) {
      auto r = reclaim_process(ctx, pid);
      if (r.ok()) {
        freed += r.value();
      }
    }
    return freed;
  }

  Result<std::uint32_t> reclaim_process(DomainContext& ctx, Pid pid) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    if (rt_.is_alive(pid)) {
      return call.finish_with(Result<std::uint32_t>(Errc::invalid_argument));
    }
    auto lk = heap_.lock();
    return call.finish_with(Result<std::uint32_t>(reclaim_locked(ctx, lk, pid)));
  }

  // -- teardown ---------------------------------------------------------

  Status destroy_entity(DomainContext& ctx, const Descriptor& d) {
    LibraryCall call(ctx);
    if (!call.ok()) {
      return call.enter_error();
    }
    auto lk = heap_.lock();
    return call.finish_with(destroy_locked(ctx, lk, d, ctx.pid(), true));
  }

  // -- introspection ----------------------------------------------------

  BusStats stats() const {
    BusStats s;
    s.writes = c_writes_.load(std::memory_order_relaxed);
    s.samples_taken = c_taken_.load(std::memory_order_relaxed);
    s.copies = c_copies_.load(std::memory_order_relaxed);
    s.deliveries = c_deliveries_.load(std::memory_order_relaxed);
    s.eager_notifies = c_eager_.load(std::memory_order_relaxed);
    s.lazy_notifies = c_lazy_.load(std::memory_order_relaxed);
    s.backpressure_rejections = c_backpressure_.load(std::memory_order_relaxed);
    s.best_effort_displaced = c_displaced_.load(std::memory_order_relaxed);
    s.heartbeats_sent = c_heartbeats_.load(std::memory_order_relaxed);
    s.heartbeat_datagrams = c_hb_datagrams_.load(std::memory_order_relaxed);
    s.acknacks_sent = c_acknacks_.load(std::memory_order_relaxed);
    s.retransmit_datagrams = c_retransmits_.load(std::memory_order_relaxed);
    s.duplicates_dropped = c_dups_.load(std::memory_order_relaxed);
    s.rx_data = c_rx_data_.load(std::memory_order_relaxed);
    s.rx_frags = c_rx_frags_.load(std::memory_order_relaxed);
    s.rx_malformed = c_rx_malformed_.load(std::memory_order_relaxed);
    s.rx_deferred = c_rx_deferred_.load(std::memory_order_relaxed);
    s.rx_unknown_topic = c_rx_unknown_.load(std::memory_order_relaxed);
    s.frag_mismatches = c_frag_mismatch_.load(std::memory_order_relaxed);
    s.net_samples_delivered = c_net_delivered_.load(std::memory_order_relaxed);
    s.samples_parked = c_parked_.load(std::memory_order_relaxed);
    s.take_spins = c_take_spins_.load(std::memory_order_relaxed);
    s.fast_path_hits = c_fast_hits_.load(std::memory_order_relaxed);
    s.fast_path_misses = c_fast_misses_.load(std::memory_order_relaxed);
    s.reclaimed_entities = c_reclaimed_.load(std::memory_order_relaxed);
    return s;
  }

  std::vector<DeliveryTrace> drain_delivery_trace() {
    std::lock_guard lock(trace_mu_);
    return std::exchange(trace_, {});
  }

  /// (writer wire id, sequence, reader index) -> payload copies made for
  /// that receiver. Instrumented builds only.
  std::map<std::tuple<std::uint32_t, std::uint64_t, std::uint32_t>, std::uint32_t>
  copy_ledger() {
    std::lock_guard lock(trace_mu_);
    return ledger_;
  }

  std::uint32_t pending_count(const Descriptor& reader) const {
    if (reader.index >= cfg_.heap_slots_per_kind) {
      return 0;
    }
    return pending_[reader.index].load(std::memory_order_acquire);
  }

 private:
  struct ReaderNetKey {
    wire::GuidPrefix guid;
    std::uint32_t topic_id = 0;
    std::uint32_t writer_id = 0;

    bool operator<(const ReaderNetKey& o) const {
      return std::tie(guid.bytes, topic_id, writer_id) <
             std::tie(o.guid.bytes, o.topic_id, o.writer_id);
    }
  };

  struct ParkedPayload {
    std::vector<std::byte> payload;
    std::uint32_t writer_wire_id = 0;
    std::int64_t timestamp_ns = 0;
  };

  struct ReassemblyEntry {
    wire::Reassembler r;
    std::int64_t last_touch_ns = 0;
  };

  static std::uint64_t next_instance_salt() {
    static std::atomic<std::uint64_t> salt{1};
    return salt.fetch_add(1, std::memory_order_relaxed);
  }

  // block helpers

  Result<BlockRef> alloc_block_impl(DomainContext& ctx, std::uint64_t capacity_bytes) {
    auto region = regions_.primary_region(ctx);
    if (!region.ok()) {
      return region.error();
    }
    auto bid = regions_.alloc_block(ctx, region.value(), capacity_bytes, Side::application);
    if (!bid.ok()) {
      return bid.error();
    }
    auto info = regions_.block_info(bid.value());
    if (!info.ok()) {
      return info.error();
    }
    return BlockRef{ctx.pid(), info.value().offset};
  }

  Result<BlockId> resolve_own_block(DomainContext& ctx, const BlockRef& ref) {
    if (ref.owner != ctx.pid()) {
      return Errc::invalid_block;
    }
    auto region = regions_.primary_region(ctx);
    if (!region.ok()) {
      return region.error();
    }
    return regions_.find_block(region.value(), ref.offset);
  }

  void release_sample_storage(SampleRec& s) {
    if (s.region_backed) {
      (void)regions_.free_block(system_ctx_, s.block);
      s.region_backed = false;
    }
    s.buffer.clear();
  }

  // entity creation

  Result<Descriptor> create_topic_impl(DomainContext& ctx, const Descriptor& participant,
                                       std::string_view name, std::uint32_t max_sample_len,
                                       const QosProfile& qos) {
    auto lk = heap_.lock();
    auto pp = heap_.resolve<EntityKind::participant>(lk, participant, ctx.pid(), true);
    if (!pp.ok()) {
      return pp.error();
    }
    if (name.empty() || name.size() > 255 || !valid_utf8(name) || max_sample_len == 0) {
      return Errc::invalid_argument;
    }
    if (qos.history == History::keep_last && qos.depth == 0) {
      return Errc::invalid_argument;
    }
    if (topics_by_name_.count(std::string(name)) != 0) {
      return Errc::duplicate_topic_name;
    }
    auto td = heap_.allocate(lk, EntityKind::topic, ctx.pid());
    if (!td.ok()) {
      return td.error();
    }
    auto tp = heap_.resolve<EntityKind::topic>(lk, td.value(), ctx.pid(), false);
    TopicRec& t = *tp.value();
    t.name = std::string(name);
    t.max_sample_len = max_sample_len;
    t.qos = qos;
    t.wire_id = wire::topic_wire_id(name);
    t.sub_wire_id = next_wire_id_++;
    topics_by_name_.emplace(t.name, td.value());
    topics_by_wire_.emplace(t.wire_id, td.value());
    return td.value();
  }

  Result<Descriptor> create_endpoint_impl(DomainContext& ctx, const Descriptor& participant,
                                          const Descriptor& topic, const QosProfile& qos,
                                          bool is_writer) {
    auto lk = heap_.lock();
    auto pp = heap_.resolve<EntityKind::participant>(lk, participant, ctx.pid(), true);
    if (!pp.ok()) {
      return pp.error();
    }
    auto tp = heap_.resolve<EntityKind::topic>(lk, topic, ctx.pid(), false);
    if (!tp.ok()) {
      return tp.error();
    }
    TopicRec& t = *tp.value();
    if (!(qos == t.qos)) {
      return Errc::qos_mismatch;
    }
    const EntityKind kind = is_writer ? EntityKind::writer : EntityKind::reader;
    auto ed = heap_.allocate(lk, kind, ctx.pid());
    if (!ed.ok()) {
      return ed.error();
    }
    if (is_writer) {
      auto wr = heap_.resolve<EntityKind::writer>(lk, ed.value(), ctx.pid(), false);
      WriterRec& w = *wr.value();
      w.topic = topic;
      w.participant = participant;
      w.wire_id = next_wire_id_++;
      w.last_hb_ns = mono_now_ns();
      t.writers.push_back(ed.value());
    } else {
      auto rr = heap_.resolve<EntityKind::reader>(lk, ed.value(), ctx.pid(), false);
      ReaderRec& r = *rr.value();
      r.topic = topic;
      r.participant = participant;
      r.queue.configure(cfg_.receipt_queue_capacity);
      pending_[ed.value().index].store(0, std::memory_order_release);
      t.readers.push_back(ed.value());
      if (t.qos.durability == Durability::transient_local) {
        replay_history(lk, t, ed.value(), r);
      }
    }
    return ed.value();
  }

  /// Late-joining reader on a transient-local topic: queue the retained
  /// history, oldest first.
  void replay_history(const HeapLock& lk, TopicRec& t, const Descriptor& reader_desc,
                      ReaderRec& r) {
    for (const auto& wd : t.writers) {
      auto wr = heap_.resolve<EntityKind::writer>(lk, wd, 0, false);
      if (!wr.ok()) {
        continue;
      }
      for (const auto& [seq, sample_desc] : wr.value()->history) {
        auto sp = heap_.resolve<EntityKind::sample>(lk, sample_desc, 0, false);
        if (!sp.ok()) {
          continue;
        }
        SampleRec& s = *sp.value();
        (void)heap_.retain_sample(lk, sample_desc, 1);
        MessageReceipt receipt{s.topic, sample_desc, s.block_ref, s.sequence, s.len,
                               s.timestamp_ns};
        auto out = r.queue.push(receipt, t.qos.reliability == Reliability::best_effort);
        if (out.accepted) {
          pending_[reader_desc.index].fetch_add(1, std::memory_order_acq_rel);
          c_deliveries_.fetch_add(1, std::memory_order_relaxed);
          if (out.displaced) {
            (void)heap_.release_sample(lk, out.displaced_receipt.sample);
            pending_[reader_desc.index].fetch_sub(1, std::memory_order_acq_rel);
          }
        } else {
          (void)heap_.release_sample(lk, sample_desc);
        }
      }
    }
  }

  Result<Descriptor> create_waitset_impl(DomainContext& ctx, const Descriptor& participant,
                                         std::span<const Descriptor> readers) {
    auto lk = heap_.lock();
    auto pp = heap_.resolve<EntityKind::participant>(lk, participant, ctx.pid(), true);
    if (!pp.ok()) {
      return pp.error();
    }
    for (const auto& rd : readers) {
      auto rr = heap_.resolve<EntityKind::reader>(lk, rd, ctx.pid(), true);
      if (!rr.ok()) {
        return rr.error();
      }
    }
    auto wd = heap_.allocate(lk, EntityKind::waitset, ctx.pid());
    if (!wd.ok()) {
      return wd.error();
    }
    auto ws = heap_.resolve<EntityKind::waitset>(lk, wd.value(), ctx.pid(), false);
    ws.value()->participant = participant;
    ws.value()->readers.assign(readers.begin(), readers.end());
    for (const auto& rd : readers) {
      auto rr = heap_.resolve<EntityKind::reader>(lk, rd, ctx.pid(), false);
      rr.value()->waitsets.push_back(wd.value());
    }
    return wd.value();
  }

  // write path

  Result<std::uint64_t> write_impl(DomainContext& ctx, const Descriptor& writer_desc,
                                   const BlockRef& block_ref, std::uint32_t len) {
    if (block_ref.owner != ctx.pid()) {
      return Errc::invalid_block;
    }
    auto region = regions_.primary_region(ctx);
    if (!region.ok()) {
      return region.error();
    }
    if (!regions_.validate_offset(region.value(), block_ref.offset, len)) {
      return Errc::invalid_block;
    }
    auto bid = regions_.find_block(region.value(), block_ref.offset);
    if (!bid.ok()) {
      return Errc::invalid_block;
    }
    auto binfo = regions_.block_info(bid.value());
    if (!binfo.ok()) {
      return Errc::invalid_block;
    }
    if (binfo.value().owner != Side::application || binfo.value().status != BlockStatus::ready ||
        binfo.value().sample_len != len) {
      return Errc::invalid_block;
    }

    auto lk = heap_.lock();
    auto wr = heap_.resolve<EntityKind::writer>(lk, writer_desc, ctx.pid(), true);
    if (!wr.ok()) {
      return wr.error();
    }
    WriterRec& w = *wr.value();
    auto tp = heap_.resolve<EntityKind::topic>(lk, w.topic, ctx.pid(), false);
    if (!tp.ok()) {
      return tp.error();
    }
    TopicRec& topic = *tp.value();
    if (len == 0 || len > topic.max_sample_len) {
      return Errc::invalid_argument;
    }

    const bool reliable = topic.qos.reliability == Reliability::reliable;
    const bool remote = !topic.peers.empty() && transport_ != nullptr;
    if (reliable && remote) {
      for (const auto& peer : topic.peers) {
        w.net.add_peer(peer.id);
      }
      if (w.net.window() >= cfg_.max_unacked_window) {
        c_backpressure_.fetch_add(1, std::memory_order_relaxed);
        return Errc::backpressure_full;
      }
    }
    if (reliable) {
      // Gapless sequences: refuse before committing anything.
      for (const auto& rd : topic.readers) {
        auto rr = heap_.resolve<EntityKind::reader>(lk, rd, ctx.pid(), false);
        if (rr.ok() && rr.value()->queue.size() >= rr.value()->queue.capacity()) {
          c_backpressure_.fetch_add(1, std::memory_order_relaxed);
          return Errc::backpressure_full;
        }
      }
    }

    auto sd = heap_.allocate(lk, EntityKind::sample, ctx.pid());
    if (!sd.ok()) {
      return sd.error();
    }
    Status transferred = regions_.transfer_block(ctx, bid.value(), Side::library);
    if (!transferred.ok()) {
      (void)heap_.free_entity(lk, sd.value());
      return Errc::invalid_block;
    }

    const std::uint64_t seq = w.next_seq++;
    auto sp = heap_.resolve<EntityKind::sample>(lk, sd.value(), ctx.pid(), false);
    SampleRec& s = *sp.value();
    s.topic = w.topic;
    s.sequence = seq;
    s.writer_wire_id = w.wire_id;
    s.len = len;
    s.timestamp_ns = mono_now_ns();
    s.region_backed = true;
    s.block = bid.value();
    s.block_ref = block_ref;
    s.filled.store(len, std::memory_order_release);

    deliver_local(ctx, lk, topic, sd.value(), s);

    if (topic.qos.durability == Durability::transient_local) {
      (void)heap_.retain_sample(lk, sd.value(), 1);
      w.history.emplace_back(seq, sd.value());
      if (topic.qos.history == History::keep_last) {
        while (w.history.size() > topic.qos.depth) {
          (void)heap_.release_sample(lk, w.history.front().second);
          w.history.pop_front();
        }
      }
    }

    if (remote) {
      auto payload = regions_.block_bytes(bid.value());
      auto datagrams = encode_sample(topic.wire_id, w.wire_id, seq, s.timestamp_ns,
                                     payload.subspan(0, len));
      if (datagrams.ok()) {
        if (reliable) {
          (void)heap_.add_network_hold(lk, sd.value(), 1);
          w.net.cache(seq, sd.value(), datagrams.value());
        }
        for (const auto& peer : topic.peers) {
          for (const auto& dg : datagrams.value()) {
            (void)transport_->send(peer, dg);
          }
        }
      }
    }

    // Nobody holds it (no readers, no pins, no peers): drop it now.
    const EntityHeader* hdr = heap_.header(lk, sd.value());
    if (hdr != nullptr && hdr->refcount == 0 && hdr->hold == 0) {
      (void)heap_.free_entity(lk, sd.value());
    }
    c_writes_.fetch_add(1, std::memory_order_relaxed);
    return seq;
  }

  Result<std::vector<std::vector<std::byte>>> encode_sample(std::uint32_t topic_id,
                                                            std::uint32_t writer_id,
                                                            std::uint64_t seq, std::int64_t ts,
                                                            std::span<const std::byte> payload) {
    std::vector<std::vector<std::byte>> out;
    if (payload.size() <= single_data_max()) {
      wire::DataSub d;
      d.topic_id = topic_id;
      d.writer_id = writer_id;
      d.sequence = seq;
      d.timestamp_ns = static_cast<std::uint64_t>(ts);
      d.payload.assign(payload.begin(), payload.end());
      wire::Message msg;
      msg.guid = guid_;
      msg.subs.emplace_back(std::move(d));
      auto bytes = wire::encode_message(msg);
      if (!bytes.ok()) {
        return bytes.error();
      }
      out.push_back(std::move(bytes.value()));
      return out;
    }
    auto frags = wire::fragment_sample(topic_id, writer_id, seq, static_cast<std::uint64_t>(ts),
                                       payload, frag_payload_max());
    if (!frags.ok()) {
      return frags.error();
    }
    out.reserve(frags.value().size());
    for (auto& f : frags.value()) {
      wire::Message msg;
      msg.guid = guid_;
      msg.subs.emplace_back(std::move(f));
      auto bytes = wire::encode_message(msg);
      if (!bytes.ok()) {
        return bytes.error();
      }
      out.push_back(std::move(bytes.value()));
    }
    return out;
  }

  std::uint16_t single_data_max() const {
    const std::uint64_t overhead = wire::kHeaderSize + wire::kSubPrefixSize + wire::kDataFixedSize;
    const std::uint64_t by_mtu =
        cfg_.net.mtu_datagram > overhead ? cfg_.net.mtu_datagram - overhead : 1;
    const std::uint64_t cap = std::min<std::uint64_t>(cfg_.mtu_payload, by_mtu);
    return static_cast<std::uint16_t>(std::min<std::uint64_t>(cap, 0xffff));
  }

  std::uint16_t frag_payload_max() const {
    const std::uint64_t overhead =
        wire::kHeaderSize + wire::kSubPrefixSize + wire::kDataFragFixedSize;
    const std::uint64_t by_mtu =
        cfg_.net.mtu_datagram > overhead ? cfg_.net.mtu_datagram - overhead : 1;
    const std::uint64_t cap = std::min<std::uint64_t>(cfg_.mtu_payload, by_mtu);
    return static_cast<std::uint16_t>(std::min<std::uint64_t>(cap, 0xffff));
  }

  /// Local fan-out. Order is the contract here: advisory counters and
  /// inflight markers go up first, then sleeping readers are woken
  /// (eager), and only then the refcount and receipt work happens. A
  /// woken reader that arrives before its receipt spins on the inflight
  /// marker, which the tail of this function clears.
  void deliver_local(DomainContext& ctx, const HeapLock& lk, TopicRec& topic,
                     const Descriptor& sample_desc, SampleRec& s) {
    struct Target {
      Descriptor desc;
      ReaderRec* rec;
    };
    std::vector<Target> targets;
    targets.reserve(topic.readers.size());
    for (const auto& rd : topic.readers) {
      auto rr = heap_.resolve<EntityKind::reader>(lk, rd, 0, false);
      if (rr.ok()) {
        targets.push_back({rd, rr.value()});
      }
    }
    if (targets.empty()) {
      return;
    }
    for (auto& t : targets) {
      pending_[t.desc.index].fetch_add(1, std::memory_order_acq_rel);
      t.rec->inflight.fetch_add(1, std::memory_order_acq_rel);
    }
    std::int64_t notify_ns = 0;
    if (cfg_.eager_notify) {
      notify_ns = mono_now_ns();
      notify_waitsets(ctx, lk, targets, [](const Target& t) { return t.rec; });
      c_eager_.fetch_add(1, std::memory_order_relaxed);
    }
    (void)heap_.retain_sample(lk, sample_desc, static_cast<std::uint32_t>(targets.size()));
    const bool drop_oldest = topic.qos.reliability == Reliability::best_effort;
    MessageReceipt receipt{s.topic, sample_desc, s.block_ref, s.sequence, s.len, s.timestamp_ns};
    std::vector<DeliveryTrace> local_trace;
    for (auto& t : targets) {
      auto out = t.rec->queue.push(receipt, drop_oldest);
      if (out.accepted) {
        c_deliveries_.fetch_add(1, std::memory_order_relaxed);
        if (cfg_.instrument) {
          local_trace.push_back(
              {s.sequence, t.desc.index, notify_ns, mono_now_ns()});
        }
        if (out.displaced) {
          (void)heap_.release_sample(lk, out.displaced_receipt.sample);
          pending_[t.desc.index].fetch_sub(1, std::memory_order_acq_rel);
          c_displaced_.fetch_add(1, std::memory_order_relaxed);
        }
      } else {
        // closed or full (reliable pre-check raced a teardown): undo
        (void)heap_.release_sample(lk, sample_desc);
        pending_[t.desc.index].fetch_sub(1, std::memory_order_acq_rel);
      }
      t.rec->inflight.fetch_sub(1, std::memory_order_acq_rel);
    }
    if (!cfg_.eager_notify) {
      const std::int64_t late_notify = mono_now_ns();
      notify_waitsets(ctx, lk, targets, [](const Target& t) { return t.rec; });
      c_lazy_.fetch_add(1, std::memory_order_relaxed);
      for (auto& e : local_trace) {
        e.notify_ns = late_notify;
      }
    }
    if (cfg_.instrument && !local_trace.empty()) {
      std::lock_guard tl(trace_mu_);
      for (auto& e : local_trace) {
        trace_.push_back(e);
      }
    }
  }

  template <typename Targets, typename GetRec>
  void notify_waitsets(DomainContext& ctx, const HeapLock& lk, Targets& targets, GetRec get) {
    std::vector<Descriptor> seen;
    for (auto& t : targets) {
      for (const auto& wsd : get(t)->waitsets) {
        bool dup = false;
        for (const auto& s : seen) {
          dup = dup || s == wsd;
        }
        if (dup) {
          continue;
        }
        seen.push_back(wsd);
        auto ws = heap_.resolve<EntityKind::waitset>(lk, wsd, 0, false);
        if (ws.ok()) {
          (void)WaitOps::notify(ctx, ws.value()->word, NotifyCount::all);
        }
      }
    }
  }

  // take path

  struct SampleView {
    bool region_backed = false;
    BlockId block;
    const std::byte* buffer_data = nullptr;
    const std::atomic<std::uint32_t>* filled = nullptr;
    std::uint32_t len = 0;
    std::uint64_t sequence = 0;
    std::int64_t timestamp_ns = 0;
    std::uint32_t writer_wire_id = 0;
  };

  Result<std::vector<TakenSample>> take_impl(DomainContext& ctx, const Descriptor& reader_desc,
                                             std::span<const BlockRef> dest, std::uint32_t max) {
    ReceiptQueue* queue = nullptr;
    std::atomic<std::uint32_t>* inflight = nullptr;
    std::uint32_t max_sample_len = 0;
    std::vector<BlockId> dest_blocks;
    {
      auto lk = heap_.lock();
      auto rr = heap_.resolve<EntityKind::reader>(lk, reader_desc, ctx.pid(), true);
      if (!rr.ok()) {
        return rr.error();
      }
      ReaderRec& r = *rr.value();
      auto tp = heap_.resolve<EntityKind::topic>(lk, r.topic, ctx.pid(), false);
      if (!tp.ok()) {
        return tp.error();
      }
      max_sample_len = tp.value()->max_sample_len;
      queue = &r.queue;
      inflight = &r.inflight;
    }
    // Destination blocks must be the caller's, idle, and big enough for
    // any sample of this topic; validating everything up front means a
    // popped receipt is never lost to a bad destination.
    dest_blocks.reserve(dest.size());
    for (const auto& ref : dest) {
      auto bid = resolve_own_block(ctx, ref);
      if (!bid.ok()) {
        return Errc::invalid_block;
      }
      auto info = regions_.block_info(bid.value());
      if (!info.ok()) {
        return Errc::invalid_block;
      }
      if (info.value().owner != Side::application || info.value().status != BlockStatus::empty ||
          info.value().capacity < max_sample_len) {
        return Errc::invalid_block;
      }
      dest_blocks.push_back(bid.value());
    }

    std::vector<TakenSample> out;
    std::size_t dest_i = 0;
    while (out.size() < max && dest_i < dest_blocks.size()) {
      auto receipt = queue->pop();
      if (!receipt.has_value()) {
        if (inflight->load(std::memory_order_acquire) == 0) {
          break;
        }
        // A deliverer announced itself (inflight) but has not appended
        // yet; its library call completes within the bound, so this spin
        // is bounded too.
        c_take_spins_.fetch_add(1, std::memory_order_relaxed);
        std::uint32_t spins = 0;
        while (queue->size() == 0 && inflight->load(std::memory_order_acquire) > 0 &&
               ++spins < (1u << 24)) {
          if ((spins & 0x3ff) == 0) {
            std::this_thread::yield();
          }
        }
        continue;
      }
      pending_[reader_desc.index].fetch_sub(1, std::memory_order_acq_rel);
      SampleView view;
      {
        auto lk = heap_.lock();
        auto sp = heap_.resolve<EntityKind::sample>(lk, receipt->sample, 0, false);
        if (!sp.ok()) {
          continue;  // sample reclaimed under us; receipt is void
        }
        SampleRec& s = *sp.value();
        view.region_backed = s.region_backed;
        view.block = s.block;
        view.buffer_data = s.buffer.data();
        view.filled = &s.filled;
        view.len = s.len;
        view.sequence = s.sequence;
        view.timestamp_ns = s.timestamp_ns;
        view.writer_wire_id = s.writer_wire_id;
      }
      // Single payload copy for this (sample, receiver) pair.
      const BlockId dst = dest_blocks[dest_i++];
      auto dst_bytes = regions_.block_bytes(dst);
      copy_payload(view, dst_bytes);
      (void)regions_.mark_ready(ctx, dst, view.len);
      {
        auto lk = heap_.lock();
        (void)heap_.release_sample(lk, receipt->sample);
      }
      c_copies_.fetch_add(1, std::memory_order_relaxed);
      c_taken_.fetch_add(1, std::memory_order_relaxed);
      if (cfg_.instrument) {
        std::lock_guard tl(trace_mu_);
        ++ledger_[{view.writer_wire_id, view.sequence, reader_desc.index}];
      }
      out.push_back({view.sequence, view.len, view.timestamp_ns, view.writer_wire_id});
    }
    return out;
  }

  /// Copies the payload, chasing the producer's watermark so a receiver
  /// woken eagerly can start before the payload is fully in place.
  void copy_payload(const SampleView& view, std::span<std::byte> dst) {
    if (view.region_backed) {
      auto src = regions_.block_bytes(view.block);
      std::memcpy(dst.data(), src.data(), view.len);
      return;
    }
    std::uint32_t copied = 0;
    std::uint32_t spins = 0;
    while (copied < view.len) {
      const std::uint32_t avail = view.filled->load(std::memory_order_acquire);
      if (avail > copied) {
        std::memcpy(dst.data() + copied, view.buffer_data + copied, avail - copied);
        copied = avail;
      } else if (++spins > (1u << 26)) {
        break;  // producer vanished; deliver what arrived
      } else if ((spins & 0x3ff) == 0) {
        std::this_thread::yield();
      }
    }
  }

  // rx path (daemon thread)

  void handle_data(DomainContext& ctx, Endpoint src, const wire::GuidPrefix& guid,
                   wire::DataSub&& d) {
    c_rx_data_.fetch_add(1, std::memory_order_relaxed);
    auto lk = heap_.lock();
    auto topic_desc = topic_for_wire(lk, d.topic_id);
    if (!topic_desc.has_value()) {
      c_rx_unknown_.fetch_add(1, std::memory_order_relaxed);
      return;
    }
    auto tp = heap_.resolve<EntityKind::topic>(lk, *topic_desc, 0, false);
    TopicRec& topic = *tp.value();
    if (d.payload.size() > topic.max_sample_len) {
      c_rx_malformed_.fetch_add(1, std::memory_order_relaxed);
      return;
    }
    ingest_sample(ctx, lk, *topic_desc, topic, guid, d.writer_id, d.sequence,
                  static_cast<std::int64_t>(d.timestamp_ns), std::move(d.payload));
    (void)src;
  }

  void handle_frag(DomainContext& ctx, Endpoint src, const wire::GuidPrefix& guid,
                   wire::DataFragSub&& f) {
    c_rx_frags_.fetch_add(1, std::memory_order_relaxed);
    auto lk = heap_.lock();
    auto topic_desc = topic_for_wire(lk, f.topic_id);
    if (!topic_desc.has_value()) {
      c_rx_unknown_.fetch_add(1, std::memory_order_relaxed);
      return;
    }
    auto tp = heap_.resolve<EntityKind::topic>(lk, *topic_desc, 0, false);
    TopicRec& topic = *tp.value();
    if (f.total_len > topic.max_sample_len) {
      c_rx_malformed_.fetch_add(1, std::memory_order_relaxed);
      return;
    }
    const ReaderNetKey key{guid, f.topic_id, f.writer_id};
    if (topic.qos.reliability == Reliability::reliable &&
        reader_net_[key].is_duplicate(f.sequence)) {
      c_dups_.fetch_add(1, std::memory_order_relaxed);
      return;
    }
    auto& per_writer = reassembly_[key];
    auto [it, inserted] = per_writer.try_emplace(f.sequence);
    it->second.last_touch_ns = mono_now_ns();
    const std::uint64_t seq = f.sequence;
    const std::uint64_t ts = f.timestamp_ns;
    const std::uint32_t writer_id = f.writer_id;
    auto added = it->second.r.add(f);
    if (!added.ok()) {
      c_frag_mismatch_.fetch_add(1, std::memory_order_relaxed);
      per_writer.erase(it);
      return;
    }
    if (!added.value()) {
      return;
    }
    std::vector<std::byte> payload = std::move(it->second.r.payload());
    per_writer.erase(it);
    ingest_sample(ctx, lk, *topic_desc, topic, guid, writer_id, seq,
                  static_cast<std::int64_t>(ts), std::move(payload));
    (void)src;
  }

  /// Common acceptance path for a complete incoming sample.
  void ingest_sample(DomainContext& ctx, const HeapLock& lk, const Descriptor& topic_desc,
                     TopicRec& topic, const wire::GuidPrefix& guid, std::uint32_t writer_id,
                     std::uint64_t seq, std::int64_t ts, std::vector<std::byte>&& payload) {
    const ReaderNetKey key{guid, topic.wire_id, writer_id};
    if (topic.qos.reliability == Reliability::best_effort) {
      auto& seen = best_effort_seen_[key];
      if (seq <= seen) {
        c_dups_.fetch_add(1, std::memory_order_relaxed);
        return;
      }
      seen = seq;
      deliver_remote(ctx, lk, topic_desc, topic, writer_id, seq, ts, std::move(payload));
      return;
    }
    auto& rel = reader_net_[key];
    if (rel.is_duplicate(seq)) {
      c_dups_.fetch_add(1, std::memory_order_relaxed);
      return;
    }
    const std::uint32_t run = rel.peek_run_length(seq);
    if (run > 0 && !can_accept_run(lk, topic, run)) {
      c_rx_deferred_.fetch_add(1, std::memory_order_relaxed);
      return;  // no state change; the next heartbeat renacks it
    }
    auto deliverable = rel.offer(seq);
    if (deliverable.empty()) {
      parked_[key][seq] = ParkedPayload{std::move(payload), writer_id, ts};
      c_parked_.fetch_add(1, std::memory_order_relaxed);
      return;
    }
    for (const std::uint64_t s : deliverable) {
      if (s == seq) {
        deliver_remote(ctx, lk, topic_desc, topic, writer_id, s, ts, std::move(payload));
      } else {
        auto& per_writer = parked_[key];
        auto pit = per_writer.find(s);
        if (pit == per_writer.end()) {
          continue;
        }
        ParkedPayload parked = std::move(pit->second);
        per_writer.erase(pit);
        deliver_remote(ctx, lk, topic_desc, topic, parked.writer_wire_id, s,
                       parked.timestamp_ns, std::move(parked.payload));
      }
    }
  }

  bool can_accept_run(const HeapLock& lk, TopicRec& topic, std::uint32_t run) {
    if (heap_.occupied(lk, EntityKind::sample) + run > heap_.capacity()) {
      return false;
    }
    for (const auto& rd : topic.readers) {
      auto rr = heap_.resolve<EntityKind::reader>(lk, rd, 0, false);
      if (rr.ok() &&
          rr.value()->queue.size() + run > rr.value()->queue.capacity()) {
        return false;
      }
    }
    return true;
  }

  /// Remote-sample delivery: wake first, then allocate, fill, and append.
  /// The payload lands in a protected buffer after the wakeups go out;
  /// receivers chase `filled`.
  void deliver_remote(DomainContext& ctx, const HeapLock& lk, const Descriptor& topic_desc,
                      TopicRec& topic, std::uint32_t writer_id, std::uint64_t seq,
                      std::int64_t ts, std::vector<std::byte>&& payload) {
    struct Target {
      Descriptor desc;
      ReaderRec* rec;
    };
    std::vector<Target> targets;
    targets.reserve(topic.readers.size());
    for (const auto& rd : topic.readers) {
      auto rr = heap_.resolve<EntityKind::reader>(lk, rd, 0, false);
      if (rr.ok()) {
        targets.push_back({rd, rr.value()});
      }
    }
    if (targets.empty()) {
      return;
    }
    for (auto& t : targets) {
      pending_[t.desc.index].fetch_add(1, std::memory_order_acq_rel);
      t.rec->inflight.fetch_add(1, std::memory_order_acq_rel);
    }
    std::int64_t notify_ns = 0;
    if (cfg_.eager_notify) {
      notify_ns = mono_now_ns();
      notify_waitsets(ctx, lk, targets, [](const Target& t) { return t.rec; });
      c_eager_.fetch_add(1, std::memory_order_relaxed);
    }
    auto sd = heap_.allocate(lk, EntityKind::sample, ctx.pid());
    if (!sd.ok()) {
      for (auto& t : targets) {
        pending_[t.desc.index].fetch_sub(1, std::memory_order_acq_rel);
        t.rec->inflight.fetch_sub(1, std::memory_order_acq_rel);
      }
      return;
    }
    auto sp = heap_.resolve<EntityKind::sample>(lk, sd.value(), ctx.pid(), false);
    SampleRec& s = *sp.value();
    s.topic = topic_desc;
    s.sequence = seq;
    s.writer_wire_id = writer_id;
    s.len = static_cast<std::uint32_t>(payload.size());
    s.timestamp_ns = ts;
    s.region_backed = false;
    s.block_ref = {};
    // Landing copy: the rx buffer is transient scratch, the sample slot is
    // the payload's protected home. It runs after the wakeups above, so an
    // eagerly woken receiver's wake latency overlaps it; receivers chase
    // `filled` and the heap lock before touching the bytes.
    s.buffer.assign(payload.begin(), payload.end());
    s.filled.store(s.len, std::memory_order_release);
    (void)heap_.retain_sample(lk, sd.value(), static_cast<std::uint32_t>(targets.size()));
    const bool drop_oldest = topic.qos.reliability == Reliability::best_effort;
    MessageReceipt receipt{topic_desc, sd.value(), BlockRef{}, seq, s.len, ts};
    std::vector<DeliveryTrace> local_trace;
    for (auto& t : targets) {
      auto out = t.rec->queue.push(receipt, drop_oldest);
      if (out.accepted) {
        c_deliveries_.fetch_add(1, std::memory_order_relaxed);
        if (cfg_.instrument) {
          local_trace.push_back({seq, t.desc.index, notify_ns, mono_now_ns()});
        }
        if (out.displaced) {
          (void)heap_.release_sample(lk, out.displaced_receipt.sample);
          pending_[t.desc.index].fetch_sub(1, std::memory_order_acq_rel);
          c_displaced_.fetch_add(1, std::memory_order_relaxed);
        }
      } else {
        (void)heap_.release_sample(lk, sd.value());
        pending_[t.desc.index].fetch_sub(1, std::memory_order_acq_rel);
      }
      t.rec->inflight.fetch_sub(1, std::memory_order_acq_rel);
    }
    if (!cfg_.eager_notify) {
      const std::int64_t late_notify = mono_now_ns();
      notify_waitsets(ctx, lk, targets, [](const Target& t) { return t.rec; });
      c_lazy_.fetch_add(1, std::memory_order_relaxed);
      for (auto& e : local_trace) {
        e.notify_ns = late_notify;
      }
    }
    if (cfg_.instrument && !local_trace.empty()) {
      std::lock_guard tl(trace_mu_);
      for (auto& e : local_trace) {
        trace_.push_back(e);
      }
    }
    c_net_delivered_.fetch_add(1, std::memory_order_relaxed);
  }

  void handle_heartbeat(DomainContext& ctx, Endpoint src, const wire::GuidPrefix& guid,
                        const wire::HeartbeatSub& hb) {
    auto lk = heap_.lock();
    auto topic_desc = topic_for_wire(lk, hb.topic_id);
    if (!topic_desc.has_value()) {
      c_rx_unknown_.fetch_add(1, std::memory_order_relaxed);
      return;
    }
    auto tp = heap_.resolve<EntityKind::topic>(lk, *topic_desc, 0, false);
    TopicRec& topic = *tp.value();
    if (topic.qos.reliability != Reliability::reliable || topic.readers.empty()) {
      return;
    }
    auto& rel = reader_net_[ReaderNetKey{guid, hb.topic_id, hb.writer_id}];
    rel.on_heartbeat(hb);
    auto an = rel.make_acknack(hb.topic_id, topic.sub_wire_id);
    wire::Message msg;
    msg.guid = guid_;
    msg.subs.emplace_back(an);
    auto bytes = wire::encode_message(msg);
    if (bytes.ok() && transport_ != nullptr) {
      (void)transport_->send(src, bytes.value());
      c_acknacks_.fetch_add(1, std::memory_order_relaxed);
    }
    (void)ctx;
  }

  void handle_acknack(DomainContext& ctx, Endpoint src, const wire::AckNackSub& an) {
    auto lk = heap_.lock();
    auto topic_desc = topic_for_wire(lk, an.topic_id);
    if (!topic_desc.has_value()) {
      c_rx_unknown_.fetch_add(1, std::memory_order_relaxed);
      return;
    }
    auto tp = heap_.resolve<EntityKind::topic>(lk, *topic_desc, 0, false);
    TopicRec& topic = *tp.value();
    for (const auto& wd : topic.writers) {
      auto wr = heap_.resolve<EntityKind::writer>(lk, wd, 0, false);
      if (!wr.ok()) {
        continue;
      }
      auto outcome = wr.value()->net.on_acknack(src.id, an);
      for (const auto& dg : outcome.retransmit) {
        if (transport_ != nullptr) {
          (void)transport_->send(src, dg);
          c_retransmits_.fetch_add(1, std::memory_order_relaxed);
        }
      }
      for (const auto& [seq, sample_desc] : outcome.fully_acked) {
        (void)heap_.release_network_hold(lk, sample_desc);
      }
    }
    (void)ctx;
  }

  void sweep_reassembly(std::int64_t now_ns) {
    if (now_ns - last_sweep_ns_ < 1'000'000'000) {
      return;
    }
    last_sweep_ns_ = now_ns;
    for (auto& [key, per_writer] : reassembly_) {
      for (auto it = per_writer.begin(); it != per_writer.end();) {
        if (now_ns - it->second.last_touch_ns > cfg_.reassembly_expiry_ns) {
          it = per_writer.erase(it);
        } else {
          ++it;
        }
      }
    }
  }

  std::optional<Descriptor> topic_for_wire(const HeapLock& lk, std::uint32_t wire_id) {
    auto it = topics_by_wire_.find(wire_id);
    if (it == topics_by_wire_.end()) {
      return std::nullopt;
    }
    if (!heap_.check(lk, it->second, EntityKind::topic, 0, false).ok()) {
      topics_by_wire_.erase(it);
      return std::nullopt;
    }
    return it->second;
  }

  void spin_while_inflight(const std::vector<ReaderRec*>& watch) {
    std::uint32_t spins = 0;
    while (++spins < (1u << 24)) {
      bool any_inflight = false;
      for (auto* r : watch) {
        if (r->queue.size() > 0) {
          return;
        }
        any_inflight = any_inflight || r->inflight.load(std::memory_order_acquire) > 0;
      }
      if (!any_inflight) {
        return;
      }
      if ((spins & 0x3ff) == 0) {
        // On a machine with fewer cores than runnable threads the deliverer
        // may be descheduled mid-call; give it the cpu back.
        std::this_thread::yield();
      }
    }
  }

  // teardown helpers (heap lock held)

  Status destroy_locked(DomainContext& ctx, const HeapLock& lk, const Descriptor& d, Pid caller,
                        bool ownership_required) {
    Status ok = heap_.check(lk, d, d.kind, caller, ownership_required);
    if (!ok.ok()) {
      return ok;
    }
    switch (d.kind) {
      case EntityKind::reader: {
        auto rr = heap_.resolve<EntityKind::reader>(lk, d, 0, false);
        ReaderRec& r = *rr.value();
        for (const auto& receipt : r.queue.drain_and_close()) {
          (void)heap_.release_sample(lk, receipt.sample);
          pending_[d.index].fetch_sub(1, std::memory_order_acq_rel);
        }
        detach_reader(lk, d, r);
        return heap_.free_entity(lk, d);
      }
      case EntityKind::writer: {
        auto wr = heap_.resolve<EntityKind::writer>(lk, d, 0, false);
        WriterRec& w = *wr.value();
        for (const auto& [seq, sd] : w.history) {
          (void)heap_.release_sample(lk, sd);
        }
        w.history.clear();
        for (const auto& [seq, sd] : w.net.abandon()) {
          (void)heap_.release_network_hold(lk, sd);
        }
        auto tp = heap_.resolve<EntityKind::topic>(lk, w.topic, 0, false);
        if (tp.ok()) {
          remove_desc(tp.value()->writers, d);
        }
        return heap_.free_entity(lk, d);
      }
      case EntityKind::waitset: {
        auto ws = heap_.resolve<EntityKind::waitset>(lk, d, 0, false);
        WaitsetRec& w = *ws.value();
        (void)WaitOps::notify(ctx, w.word, NotifyCount::all);
        for (const auto& rd : w.readers) {
          auto rr = heap_.resolve<EntityKind::reader>(lk, rd, 0, false);
          if (rr.ok()) {
            remove_desc(rr.value()->waitsets, d);
          }
        }
        return heap_.free_entity(lk, d);
      }
      case EntityKind::topic: {
        auto tp = heap_.resolve<EntityKind::topic>(lk, d, 0, false);
        TopicRec& t = *tp.value();
        if (!t.writers.empty() || !t.readers.empty()) {
          return Errc::invalid_state_transition;
        }
        topics_by_name_.erase(t.name);
        topics_by_wire_.erase(t.wire_id);
        return heap_.free_entity(lk, d);
      }
      case EntityKind::participant:
        return heap_.free_entity(lk, d);
      case EntityKind::sample:
        return heap_.free_entity(lk, d);
    }
    return Errc::invalid_argument;
  }

  void detach_reader(const HeapLock& lk, const Descriptor& d, ReaderRec& r) {
    auto tp = heap_.resolve<EntityKind::topic>(lk, r.topic, 0, false);
    if (tp.ok()) {
      remove_desc(tp.value()->readers, d);
    }
    for (const auto& wsd : r.waitsets) {
      auto ws = heap_.resolve<EntityKind::waitset>(lk, wsd, 0, false);
      if (ws.ok()) {
        remove_desc(ws.value()->readers, d);
      }
    }
    r.waitsets.clear();
  }

  static void remove_desc(std::vector<Descriptor>& v, const Descriptor& d) {
    for (auto it = v.begin(); it != v.end(); ++it) {
      if (*it == d) {
        v.erase(it);
        return;
      }
    }
  }

  std::uint32_t reclaim_locked(DomainContext& ctx, const HeapLock& lk, Pid pid) {
    std::uint32_t freed = 0;
    std::vector<Descriptor> victims;

    heap_.for_each_owned<EntityKind::reader>(
        lk, pid, [&](const Descriptor& d, EntityHeader&, ReaderRec&) { victims.push_back(d); });
    heap_.for_each_owned<EntityKind::writer>(
        lk, pid, [&](const Descriptor& d, EntityHeader&, WriterRec&) { victims.push_back(d); });
    heap_.for_each_owned<EntityKind::waitset>(
        lk, pid, [&](const Descriptor& d, EntityHeader&, WaitsetRec&) { victims.push_back(d); });
    for (const auto& d : victims) {
      if (destroy_locked(ctx, lk, d, pid, false).ok()) {
        ++freed;
      }
    }
    victims.clear();

    heap_.for_each_owned<EntityKind::topic>(
        lk, pid, [&](const Descriptor& d, EntityHeader&, TopicRec& t) {
          if (t.writers.empty() && t.readers.empty()) {
            victims.push_back(d);
          }
        });
    heap_.for_each_owned<EntityKind::participant>(
        lk, pid, [&](const Descriptor& d, EntityHeader&, ParticipantRec&) { victims.push_back(d); });
    for (const auto& d : victims) {
      if (destroy_locked(ctx, lk, d, pid, false).ok()) {
        ++freed;
      }
    }
    // Samples published by the dead process stay while receipts or peers
    // still hold them; the release paths free them (and their blocks).
    c_reclaimed_.fetch_add(freed, std::memory_order_relaxed);
    return freed;
  }

  static bool valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
      const auto b = static_cast<std::uint8_t>(s[i]);
      std::size_t extra = 0;
      if (b < 0x80) {
        extra = 0;
      } else if ((b & 0xe0) == 0xc0 && b >= 0xc2) {
        extra = 1;
      } else if ((b & 0xf0) == 0xe0) {
        extra = 2;
      } else if ((b & 0xf8) == 0xf0 && b <= 0xf4) {
        extra = 3;
      } else {
        return false;
      }
      if (i + extra >= s.size()) {
        return false;
      }
      for (std::size_t k = 1; k <= extra; ++k) {
        if ((static_cast<std::uint8_t>(s[i + k]) & 0xc0) != 0x80) {
          return false;
        }
      }
      i += extra + 1;
    }
    return true;
  }

  const Config cfg_;
  Runtime rt_;
  RegionTable regions_;
  Heap heap_;
  std::unique_ptr<std::atomic<std::uint32_t>[]> pending_;
  ProcessIdentity system_identity_;
  DomainContext system_ctx_;
  wire::GuidPrefix guid_;
  Transport* transport_ = nullptr;
  std::uint32_t next_wire_id_ = 1;

  // guarded by the heap lock
  std::unordered_map<std::string, Descriptor> topics_by_name_;
  std::unordered_map<std::uint32_t, Descriptor> topics_by_wire_;

  // guarded by rx_mu_
  std::mutex rx_mu_;
  std::map<ReaderNetKey, ReaderReliability> reader_net_;
  std::map<ReaderNetKey, std::uint64_t> best_effort_seen_;
  std::map<ReaderNetKey, std::map<std::uint64_t, ParkedPayload>> parked_;
  std::map<ReaderNetKey, std::map<std::uint64_t, ReassemblyEntry>> reassembly_;
  std::int64_t last_sweep_ns_ = 0;

  std::mutex trace_mu_;
  std::vector<DeliveryTrace> trace_;
  std::map<std::tuple<std::uint32_t, std::uint64_t, std::uint32_t>, std::uint32_t> ledger_;

  std::atomic<std::uint64_t> c_writes_{0}, c_taken_{0}, c_copies_{0}, c_deliveries_{0},
      c_eager_{0}, c_lazy_{0}, c_backpressure_{0}, c_displaced_{0}, c_heartbeats_{0},
      c_hb_datagrams_{0}, c_acknacks_{0}, c_retransmits_{0}, c_dups_{0}, c_rx_data_{0},
      c_rx_frags_{0}, c_rx_malformed_{0}, c_rx_deferred_{0}, c_rx_unknown_{0},
      c_frag_mismatch_{0}, c_net_delivered_{0}, c_parked_{0}, c_take_spins_{0}, c_fast_hits_{0},
      c_fast_misses_{0}, c_reclaimed_{0};
};

}  // namespace domainbus

#endif  // DOMAINBUS__DDS_HPP_
