#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <vector>

namespace aera {

template <class T>
struct Sequenced {
  std::uint64_t seq = 0;
  T value;
};

/// Append-only broadcast log with a bounded replay window. Readers keep their
/// own cursor (the last sequence number they saw), so any number of
/// subscribers can attach, detach and reconnect without coordinating.
template <class T>
class Channel {
 public:
  explicit Channel(std::size_t capacity = 1024) : capacity_(capacity) {}

  struct ReadResult {
    std::vector<Sequenced<T>> items;
    bool closed = false;  // no further items will ever arrive after `items`
    bool gap = false;     // the cursor fell out of the replay window
  };

  std::uint64_t publish(T value) {
    std::uint64_t seq;
    {
      std::lock_guard lock(mu_);
      if (closed_) return 0;
      seq = ++last_seq_;
      buffer_.push_back({seq, std::move(value)});
      if (buffer_.size() > capacity_) buffer_.pop_front();
    }
    cv_.notify_all();
    return seq;
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  // Returns items with seq > after, waiting up to `wait` for at least one.
  ReadResult read_after(std::uint64_t after, std::chrono::milliseconds wait) const {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, wait, [&] { return closed_ || last_seq_ > after; });
    ReadResult r;
    if (!buffer_.empty() && after + 1 < buffer_.front().seq) {
      r.gap = true;
      r.closed = closed_;
      return r;
    }
    for (const auto& item : buffer_)
      if (item.seq > after) r.items.push_back(item);
    r.closed = closed_;
    return r;
  }

  std::uint64_t last_seq() const {
    std::lock_guard lock(mu_);
    return last_seq_;
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::deque<Sequenced<T>> buffer_;
  std::uint64_t last_seq_ = 0;
  bool closed_ = false;
};

}  // namespace aera
