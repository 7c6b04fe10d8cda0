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

#ifndef DOMAINBUS__WAIT_NOTIFY_HPP_
#define DOMAINBUS__WAIT_NOTIFY_HPP_

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <mutex>

#include "domainbus/clock.hpp"
#include "domainbus/errors.hpp"
#include "domainbus/runtime.hpp"

namespace domainbus {

/// A 32-bit wait word, futex style. The word lives in protected memory;
/// Library code snapshots it and bumps it, Application code sleeps on it.
/// Blocking therefore always happens outside the library, so a sleeping
/// thread never holds a library call open.
class WaitWord {
 public:
  WaitWord() = default;
  WaitWord(const WaitWord&) = delete;
  WaitWord& operator=(const WaitWord&) = delete;

  std::uint32_t value() const {
    std::lock_guard lock(mu_);
    return value_;
  }

 private:
  friend class WaitOps;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::uint32_t value_ = 0;
  std::uint32_t blocked_ = 0;      // waiters currently asleep
  std::uint32_t wake_tokens_ = 0;  // issued wakes not yet claimed
};

/// Snapshot handed from prepare_wait (Library mode) to wait_outside
/// (Application mode). The expected value is the lost-wakeup guard: any
/// notify between the snapshot and the sleep changes the word, and
/// wait_outside then refuses to sleep.
struct WaitDirective {
  WaitWord* word = nullptr;
  std::uint32_t expected = 0;
};

enum class WaitOutcome : std::uint8_t {
  woken,          // claimed a wake issued by notify
  value_changed,  // word no longer matches the snapshot; did not sleep
  timed_out,
};

enum class NotifyCount : std::uint8_t {
  one,
  all,
};

inline const char* wait_outcome_name(WaitOutcome o) noexcept {
  switch (o) {
    case WaitOutcome::woken: return "Woken";
    case WaitOutcome::value_changed: return "ValueChanged";
    case WaitOutcome::timed_out: return "TimedOut";
  }
  return "unknown";
}

class WaitOps {
 public:
  /// Snapshots the word for a later wait. Library mode only.
  static Result<WaitDirective> prepare_wait(DomainContext& ctx, WaitWord& word) {
    if (ctx.mode() != ExecMode::library) {
      ctx.runtime().count_context_violation();
      return Errc::context_violation;
    }
    std::lock_guard lock(word.mu_);
    return WaitDirective{&word, word.value_};
  }

  /// Sleeps until notified, the word changes, or the timeout expires.
  /// Application mode only: a Library-mode caller would stall the domain.
  /// timeout_ns < 0 means no timeout. Spurious wakeups are permitted and
  /// surface as `woken`.
  static Result<WaitOutcome> wait_outside(DomainContext& ctx, const WaitDirective& d,
                                          std::int64_t timeout_ns) {
    if (ctx.mode() != ExecMode::application) {
      ctx.runtime().count_context_violation();
      return Errc::context_violation;
    }
    if (d.word == nullptr) {
      return Errc::invalid_argument;
    }
    WaitWord& w = *d.word;
    std::unique_lock lock(w.mu_);
    if (w.value_ != d.expected) {
      return WaitOutcome::value_changed;
    }
    ++w.blocked_;
    const auto claimable = [&w] { return w.wake_tokens_ > 0; };
    bool claimed = false;
    if (timeout_ns < 0) {
      w.cv_.wait(lock, claimable);
      claimed = true;
    } else {
      const auto deadline =
          std::chrono::steady_clock::now() + std::chrono::nanoseconds(timeout_ns);
      claimed = w.cv_.wait_until(lock, deadline, claimable);
    }
    --w.blocked_;
    if (!claimed) {
      return WaitOutcome::timed_out;
    }
    --w.wake_tokens_;
    lock.unlock();
    // A notify-driven wake crosses the interrupt path; charge its cost.
    spin_for_ns(ctx.runtime().config().wake_cost_ns);
    return WaitOutcome::woken;
  }

  /// Advances the word and wakes up to one or all current sleepers.
  /// Library mode only. Returns the number of wakes issued; a notify with
  /// no sleepers still advances the word so that a concurrent prepared
  /// waiter cannot sleep through it.
  static Result<std::uint32_t> notify(DomainContext& ctx, WaitWord& word, NotifyCount count) {
    if (ctx.mode() != ExecMode::library) {
      ctx.runtime().count_context_violation();
      return Errc::context_violation;
    }
    std::uint32_t issued = 0;
    {
      std::lock_guard lock(word.mu_);
      ++word.value_;
      const std::uint32_t sleeping_unwoken =
          word.blocked_ > word.wake_tokens_ ? word.blocked_ - word.wake_tokens_ : 0;
      const std::uint32_t want = count == NotifyCount::one ? 1 : sleeping_unwoken;
      issued = want < sleeping_unwoken ? want : sleeping_unwoken;
      word.wake_tokens_ += issued;
    }
    if (issued > 0) {
      word.cv_.notify_all();
    }
    return issued;
  }
};

}  // namespace domainbus

#endif  // DOMAINBUS__WAIT_NOTIFY_HPP_
