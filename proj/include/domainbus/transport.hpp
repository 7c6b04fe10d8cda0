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

#ifndef DOMAINBUS__TRANSPORT_HPP_
#define DOMAINBUS__TRANSPORT_HPP_

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <queue>
#include <random>
#include <span>
#include <thread>
#include <utility>
#include <vector>

#include "domainbus/clock.hpp"
#include "domainbus/config.hpp"
#include "domainbus/errors.hpp"
#include "domainbus/runtime.hpp"

namespace domainbus {

/// Transport address. Simulated networks use the node number; UDP uses
/// the loopback port.
struct Endpoint {
  std::uint64_t id = 0;
  bool operator==(const Endpoint&) const = default;
};

struct Datagram {
  Endpoint src;
  std::vector<std::byte> bytes;
  std::int64_t arrival_ns = 0;
};

/// Bounded receive queue. Push never blocks: overflow drops the datagram
/// and counts it (reliability recovers dropped traffic end to end).
/// poll() never blocks; wait() blocks and pays the modeled interrupt
/// wakeup cost when it actually slept.
class RxQueue {
 public:
  RxQueue(std::uint32_t capacity, std::int64_t wake_cost_ns)
      : cap_(capacity), wake_cost_ns_(wake_cost_ns) {}

  RxQueue(const RxQueue&) = delete;
  RxQueue& operator=(const RxQueue&) = delete;

  bool push(Datagram&& d) {
    {
      std::lock_guard lock(mu_);
      if (q_.size() >= cap_) {
        dropped_.fetch_add(1, std::memory_order_relaxed);
        return false;
      }
      d.arrival_ns = mono_now_ns();
      q_.push_back(std::move(d));
      len_.store(static_cast<std::uint32_t>(q_.size()), std::memory_order_release);
    }
    cv_.notify_one();
    return true;
  }

  /// Up to `max` datagrams, immediately; an empty result means the queue
  /// was empty. Safe to call in any protection mode.
  std::vector<Datagram> poll(std::uint32_t max) {
    std::vector<Datagram> out;
    std::lock_guard lock(mu_);
    while (!q_.empty() && out.size() < max) {
      out.push_back(std::move(q_.front()));
      q_.pop_front();
    }
    len_.store(static_cast<std::uint32_t>(q_.size()), std::memory_order_release);
    return out;
  }

  /// Blocks until the queue is nonempty, the timeout expires, or kick()
  /// interrupts the sleep; returns the number of queued datagrams (0 on
  /// timeout or kick). Application mode only: a Library-mode sleeper
  /// would stall its domain. A wait that found data already queued
  /// returns at once and pays no wakeup cost.
  Result<std::uint32_t> wait(DomainContext& ctx, std::int64_t timeout_ns) {
    if (ctx.mode() != ExecMode::application) {
      ctx.runtime().count_context_violation();
      return Errc::context_violation;
    }
    std::unique_lock lock(mu_);
    if (!q_.empty()) {
      return static_cast<std::uint32_t>(q_.size());
    }
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::nanoseconds(timeout_ns < 0 ? 0 : timeout_ns);
    const auto wakeable = [this] { return !q_.empty() || kicked_; };
    bool ready = false;
    if (timeout_ns < 0) {
      cv_.wait(lock, wakeable);
      ready = true;
    } else {
      ready = cv_.wait_until(lock, deadline, wakeable);
    }
    if (kicked_ && q_.empty()) {
      kicked_ = false;
      return 0;
    }
    kicked_ = false;
    const auto n = static_cast<std::uint32_t>(q_.size());
    lock.unlock();
    if (ready && n > 0) {
      spin_for_ns(wake_cost_ns_);
    }
    return ready ? n : 0;
  }

  /// Wakes a sleeping wait() without delivering data; used at teardown.
  void kick() {
    {
      std::lock_guard lock(mu_);
      kicked_ = true;
    }
    cv_.notify_all();
  }

  std::uint32_t size() const noexcept { return len_.load(std::memory_order_acquire); }
  std::uint64_t dropped() const noexcept { return dropped_.load(std::memory_order_relaxed); }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Datagram> q_;
  std::uint32_t cap_;
  std::int64_t wake_cost_ns_;
  bool kicked_ = false;
  std::atomic<std::uint32_t> len_{0};
  std::atomic<std::uint64_t> dropped_{0};
};

class Transport {
 public:
  virtual ~Transport() = default;

  /// Nonblocking send of one encoded datagram.
  virtual Status send(Endpoint dest, std::span<const std::byte> bytes) = 0;
  virtual RxQueue& rx() = 0;
  virtual Endpoint endpoint() const = 0;
};

/// In-process network with seeded loss, delay, jitter, and reordering.
/// Every per-datagram random decision comes from one generator consumed
/// in send-call order, so a fixed seed and send schedule reproduce the
/// same decisions exactly. Zero-delay datagrams are handed to the
/// destination inline; delayed ones go through the pump thread ordered
/// by (due time, send ordinal).
class SimNetwork {
 public:
  struct Decision {
    std::uint64_t ordinal = 0;
    bool lost = false;
    std::int64_t delay_ns = 0;
  };

  struct Stats {
    std::uint64_t sent = 0;
    std::uint64_t delivered = 0;
    std::uint64_t lost = 0;
  };

  class Node : public Transport {
   public:
    Node(SimNetwork& net, std::uint64_t id, std::uint32_t rx_capacity, std::int64_t wake_cost_ns)
        : net_(net), id_{id}, rx_(rx_capacity, wake_cost_ns) {}

    Status send(Endpoint dest, std::span<const std::byte> bytes) override {
      return net_.send_from(id_, dest, bytes);
    }
    RxQueue& rx() override { return rx_; }
    Endpoint endpoint() const override { return id_; }

   private:
    friend class SimNetwork;
    SimNetwork& net_;
    Endpoint id_;
    RxQueue rx_;
  };

  explicit SimNetwork(const NetConfig& cfg, std::uint32_t rx_capacity = 4096,
                      std::int64_t wake_cost_ns = 5'000)
      : cfg_(cfg), rx_capacity_(rx_capacity), wake_cost_ns_(wake_cost_ns), rng_(cfg.seed) {
    pump_ = std::thread([this] { pump_loop(); });
  }

  ~SimNetwork() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    pump_.join();
  }

  Node& make_node() {
    std::lock_guard lock(mu_);
    const std::uint64_t id = next_node_id_++;
    auto node = std::make_unique<Node>(*this, id, rx_capacity_, wake_cost_ns_);
    Node& ref = *node;
    nodes_.emplace(id, std::move(node));
    return ref;
  }

  Stats stats() const {
    std::lock_guard lock(mu_);
    return stats_;
  }

  void set_trace(bool on) {
    std::lock_guard lock(mu_);
    tracing_ = on;
    trace_.clear();
  }

  std::vector<Decision> trace() const {
    std::lock_guard lock(mu_);
    return trace_;
  }

 private:
  struct Pending {
    std::int64_t due_ns = 0;
    std::uint64_t ordinal = 0;
    std::uint64_t dest = 0;
    Datagram dg;
  };
  struct PendingOrder {
    bool operator()(const Pending& a, const Pending& b) const {
      return a.due_ns != b.due_ns ? a.due_ns > b.due_ns : a.ordinal > b.ordinal;
    }
  };

  Status send_from(Endpoint src, Endpoint dest, std::span<const std::byte> bytes) {
    if (bytes.size() > cfg_.mtu_datagram) {
      return Errc::oversized_datagram;
    }
    Node* dest_node = nullptr;
    std::int64_t delay = 0;
    {
      std::lock_guard lock(mu_);
      auto it = nodes_.find(dest.id);
      if (it == nodes_.end()) {
        return Errc::io_failure;
      }
      dest_node = it->second.get();
      const std::uint64_t ordinal = stats_.sent++;
      const bool lost = cfg_.loss_prob > 0.0 && uniform() < cfg_.loss_prob;
      delay = cfg_.delay_ns;
      if (cfg_.jitter_ns > 0) {
        delay += static_cast<std::int64_t>(uniform() * static_cast<double>(cfg_.jitter_ns));
      }
      if (cfg_.reorder_prob > 0.0 && uniform() < cfg_.reorder_prob) {
        delay += static_cast<std::int64_t>(uniform() * static_cast<double>(
                                               cfg_.jitter_ns > 0 ? cfg_.jitter_ns : 1'000'000));
      }
      if (tracing_) {
        trace_.push_back({ordinal, lost, lost ? 0 : delay});
      }
      if (lost) {
        ++stats_.lost;
        return Status();
      }
      if (delay > 0) {
        Pending p;
        p.due_ns = mono_now_ns() + delay;
        p.ordinal = ordinal;
        p.dest = dest.id;
        p.dg.src = src;
        p.dg.bytes.assign(bytes.begin(), bytes.end());
        heap_.push(std::move(p));
        ++stats_.delivered;
        cv_.notify_all();
        return Status();
      }
      ++stats_.delivered;
    }
    Datagram dg;
    dg.src = src;
    dg.bytes.assign(bytes.begin(), bytes.end());
    dest_node->rx().push(std::move(dg));
    return Status();
  }

  void pump_loop() {
    std::unique_lock lock(mu_);
    while (true) {
      if (stop_) {
        return;
      }
      if (heap_.empty()) {
        cv_.wait(lock, [this] { return stop_ || !heap_.empty(); });
        continue;
      }
      const std::int64_t due = heap_.top().due_ns;
      const std::int64_t now = mono_now_ns();
      if (now < due) {
        cv_.wait_until(lock, std::chrono::steady_clock::now() +
                                 std::chrono::nanoseconds(due - now));
        continue;
      }
      Pending p = std::move(const_cast<Pending&>(heap_.top()));
      heap_.pop();
      auto it = nodes_.find(p.dest);
      if (it != nodes_.end()) {
        Node* node = it->second.get();
        lock.unlock();
        node->rx().push(std::move(p.dg));
        lock.lock();
      }
    }
  }

  double uniform() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
  }

  const NetConfig cfg_;
  const std::uint32_t rx_capacity_;
  const std::int64_t wake_cost_ns_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::mt19937_64 rng_;
  std::uint64_t next_node_id_ = 1;
  std::map<std::uint64_t, std::unique_ptr<Node>> nodes_;
  std::priority_queue<Pending, std::vector<Pending>, PendingOrder> heap_;
  Stats stats_;
  bool tracing_ = false;
  std::vector<Decision> trace_;
  bool stop_ = false;
  std::thread pump_;
};

/// UDP loopback transport. The endpoint id is the bound port on
/// 127.0.0.1; a background thread feeds the receive queue.
class UdpTransport : public Transport {
 public:
  static Result<std::unique_ptr<UdpTransport>> open(std::uint16_t port, std::uint32_t rx_capacity,
                                                    std::int64_t wake_cost_ns,
                                                    std::uint32_t mtu_datagram) {
    const int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd < 0) {
      return Errc::io_failure;
    }
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(fd);
      return Errc::io_failure;
    }
    socklen_t alen = sizeof(addr);
    if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &alen) != 0) {
      ::close(fd);
      return Errc::io_failure;
    }
    timeval tv{};
    tv.tv_usec = 50'000;  // rx thread shutdown latency
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    return std::unique_ptr<UdpTransport>(
        new UdpTransport(fd, ntohs(addr.sin_port), rx_capacity, wake_cost_ns, mtu_datagram));
  }

  ~UdpTransport() override {
    stop_.store(true, std::memory_order_relaxed);
    rx_thread_.join();
    ::close(fd_);
  }

  Status send(Endpoint dest, std::span<const std::byte> bytes) override {
    if (bytes.size() > mtu_) {
      return Errc::oversized_datagram;
    }
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(dest.id));
    const auto n = ::sendto(fd_, bytes.data(), bytes.size(), 0,
                            reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    return n == static_cast<ssize_t>(bytes.size()) ? Status() : Status(Errc::io_failure);
  }

  RxQueue& rx() override { return rx_; }
  Endpoint endpoint() const override { return Endpoint{port_}; }

 private:
  UdpTransport(int fd, std::uint16_t port, std::uint32_t rx_capacity, std::int64_t wake_cost_ns,
               std::uint32_t mtu)
      : fd_(fd), port_(port), mtu_(mtu), rx_(rx_capacity, wake_cost_ns) {
    rx_thread_ = std::thread([this] { rx_loop(); });
  }

  void rx_loop() {
    std::vector<std::byte> buf(65536);
    while (!stop_.load(std::memory_order_relaxed)) {
      sockaddr_in from{};
      socklen_t flen = sizeof(from);
      const auto n = ::recvfrom(fd_, buf.data(), buf.size(), 0,
                                reinterpret_cast<sockaddr*>(&from), &flen);
      if (n <= 0) {
        continue;  // timeout or transient error; recheck stop flag
      }
      Datagram dg;
      dg.src = Endpoint{ntohs(from.sin_port)};
      dg.bytes.assign(buf.begin(), buf.begin() + n);
      rx_.push(std::move(dg));
    }
  }

  int fd_;
  std::uint64_t port_;
  std::uint32_t mtu_;
  RxQueue rx_;
  std::thread rx_thread_;
  std::atomic<bool> stop_{false};
};

}  // namespace domainbus

#endif  // DOMAINBUS__TRANSPORT_HPP_
