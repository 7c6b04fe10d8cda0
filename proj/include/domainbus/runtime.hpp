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

#ifndef DOMAINBUS__RUNTIME_HPP_
#define DOMAINBUS__RUNTIME_HPP_

#include <atomic>
#include <cstdint>
#include <mutex>
#include <unordered_map>
#include <utility>
#include <vector>

#include "domainbus/clock.hpp"
#include "domainbus/config.hpp"
#include "domainbus/errors.hpp"

namespace domainbus {

using Pid = std::uint64_t;

struct ProcessIdentity {
  Pid pid = 0;
};

/// Which protection context a thread currently executes in. Application
/// code must never touch protected state directly; Library mode is entered
/// through enter_library() and is subject to the call time bound.
enum class ExecMode : std::uint8_t {
  application,
  library,
};

/// Opaque proof of a matching enter_library(). exit_library() consumes it.
struct CallToken {
  std::uint64_t serial = 0;
};

struct CallReport {
  std::int64_t cpu_duration_ns = 0;
  std::int64_t wall_duration_ns = 0;
  bool bound_exceeded = false;
};

/// Domain-wide state: process table, violation counters, configuration.
/// One Runtime typically backs one Bus instance.
class Runtime {
 public:
  explicit Runtime(Config cfg = {}) : cfg_(cfg) {}

  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  const Config& config() const noexcept { return cfg_; }

  /// Registers a process with the domain. Identifiers are monotonically
  /// increasing and never reused, so a re-registered process is always
  /// distinguishable from its previous incarnation.
  ProcessIdentity register_process() {
    std::lock_guard lock(mu_);
    const Pid pid = next_pid_++;
    alive_.emplace(pid, true);
    return ProcessIdentity{pid};
  }

  /// Marks the process dead and queues it for resource reclamation.
  Status deregister_process(Pid pid) {
    std::lock_guard lock(mu_);
    auto it = alive_.find(pid);
    if (it == alive_.end() || !it->second) {
      return Errc::unknown_pid;
    }
    it->second = false;
    termination_queue_.push_back(pid);
    return Status();
  }

  bool is_alive(Pid pid) const {
    std::lock_guard lock(mu_);
    auto it = alive_.find(pid);
    return it != alive_.end() && it->second;
  }

  /// Hands the pending dead-process notifications to the reclaimer.
  std::vector<Pid> drain_termination_queue() {
    std::lock_guard lock(mu_);
    return std::exchange(termination_queue_, {});
  }

  std::uint64_t time_bound_violations() const noexcept {
    return time_bound_violations_.load(std::memory_order_relaxed);
  }
  std::uint64_t context_violations() const noexcept {
    return context_violations_.load(std::memory_order_relaxed);
  }

  void count_time_bound_violation() noexcept {
    time_bound_violations_.fetch_add(1, std::memory_order_relaxed);
  }
  void count_context_violation() noexcept {
    context_violations_.fetch_add(1, std::memory_order_relaxed);
  }

 private:
  const Config cfg_;
  mutable std::mutex mu_;
  Pid next_pid_ = 1;
  std::unordered_map<Pid, bool> alive_;
  std::vector<Pid> termination_queue_;
  std::atomic<std::uint64_t> time_bound_violations_{0};
  std::atomic<std::uint64_t> context_violations_{0};
};

/// Per-thread execution context. Tracks the current protection mode and
/// charges each library call against the configured time bound.
///
/// Trusted contexts (the daemon) skip crossing accounting but keep the
/// time bound: a runaway trusted call is still a reportable violation.
class DomainContext {
 public:
  DomainContext(Runtime& rt, ProcessIdentity id, bool trusted = false)
      : rt_(rt), id_(id), trusted_(trusted) {}

  DomainContext(const DomainContext&) = delete;
  DomainContext& operator=(const DomainContext&) = delete;

  Runtime& runtime() noexcept { return rt_; }
  const Runtime& runtime() const noexcept { return rt_; }
  ProcessIdentity identity() const noexcept { return id_; }
  Pid pid() const noexcept { return id_.pid; }
  ExecMode mode() const noexcept { return mode_; }
  bool trusted() const noexcept { return trusted_; }
  std::uint64_t crossings() const noexcept { return crossings_; }

  /// Application -> Library transition. Nested entry is a context
  /// violation: protected code never re-enters through the trampoline.
  Result<CallToken> enter_library() {
    if (mode_ == ExecMode::library) {
      rt_.count_context_violation();
      return Errc::context_violation;
    }
    if (!rt_.is_alive(id_.pid)) {
      return Errc::unknown_pid;
    }
    mode_ = ExecMode::library;
    if (!trusted_) {
      ++crossings_;
    }
    call_start_cpu_ns_ = thread_cpu_now_ns();
    call_start_wall_ns_ = mono_now_ns();
    return CallToken{++call_serial_};
  }

  /// Library -> Application transition. Always restores Application mode,
  /// then applies the time-bound policy to the measured call duration.
  Result<CallReport> exit_library(CallToken token) {
    if (mode_ != ExecMode::library) {
      rt_.count_context_violation();
      return Errc::context_violation;
    }
    if (token.serial != call_serial_) {
      rt_.count_context_violation();
      mode_ = ExecMode::application;
      return Errc::context_violation;
    }
    CallReport report;
    report.cpu_duration_ns = thread_cpu_now_ns() - call_start_cpu_ns_;
    report.wall_duration_ns = mono_now_ns() - call_start_wall_ns_;
    mode_ = ExecMode::application;
    if (report.cpu_duration_ns > rt_.config().time_bound_ns) {
      report.bound_exceeded = true;
      rt_.count_time_bound_violation();
      if (rt_.config().bound_policy == BoundPolicy::fail) {
        return Errc::time_bound_exceeded;
      }
    }
    return report;
  }

 private:
  Runtime& rt_;
  ProcessIdentity id_;
  bool trusted_;
  ExecMode mode_ = ExecMode::application;
  std::uint64_t crossings_ = 0;
  std::uint64_t call_serial_ = 0;
  std::int64_t call_start_cpu_ns_ = 0;
  std::int64_t call_start_wall_ns_ = 0;
};

/// RAII wrapper for one bounded library call. Every public Bus operation
/// opens one of these on entry; the destructor restores Application mode
/// even on early-error paths.
class LibraryCall {
 public:
  explicit LibraryCall(DomainContext& ctx) : ctx_(ctx), token_(ctx.enter_library()) {}

  LibraryCall(const LibraryCall&) = delete;
  LibraryCall& operator=(const LibraryCall&) = delete;

  ~LibraryCall() {
    if (!finished_ && token_.ok()) {
      (void)ctx_.exit_library(token_.value());
    }
  }

  bool ok() const noexcept { return token_.ok(); }
  Errc enter_error() const noexcept { return token_.error(); }

  /// Ends the call. Returns TimeBoundExceeded under the fail policy.
  Status finish() {
    if (!token_.ok()) {
      return token_.error();
    }
    finished_ = true;
    auto report = ctx_.exit_library(token_.value());
    return report.ok() ? Status() : Status(report.error());
  }

  /// Ends the call and folds the bound policy into an existing result:
  /// the operation's own error wins, then TimeBoundExceeded, then ok.
  template <typename T>
  Result<T> finish_with(Result<T> r) {
    Status s = finish();
    if (r.ok() && !s.ok()) {
      return s.error();
    }
    return r;
  }

  Status finish_with(Status r) {
    Status s = finish();
    if (r.ok() && !s.ok()) {
      return s;
    }
    return r;
  }

 private:
  DomainContext& ctx_;
  Result<CallToken> token_;
  bool finished_ = false;
};

}  // namespace domainbus

#endif  // DOMAINBUS__RUNTIME_HPP_
