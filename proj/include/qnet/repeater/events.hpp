#pragma once

#include <cstdint>
#include <queue>
#include <string>
#include <vector>

namespace qnet::repeater {

/// Declaration order is the tie-breaking order for simultaneous events.
enum class EventKind { Attempt, Herald, Store, Expire, Restart, Swap, Readout, Transfer, Done };
const char* to_string(EventKind kind);

struct Event {
  double time = 0.0;
  std::string node;  // node, link or pair id the event belongs to
  EventKind kind = EventKind::Attempt;
  std::uint64_t seq = 0;  // insertion counter, last tie-breaker
  std::uint64_t repetition = 0;
  std::string detail;
};

/// Strict order by (time, node, kind, seq).
bool event_before(const Event& a, const Event& b);

/// Min-queue of events in the order above. Deterministic: equal keys cannot
/// occur because seq is unique per queue.
class EventQueue {
 public:
  void push(double time, std::string node, EventKind kind, std::string detail = {},
            std::uint64_t repetition = 0);
  Event pop();
  const Event& top() const { return heap_.top(); }
  bool empty() const noexcept { return heap_.empty(); }
  std::size_t size() const noexcept { return heap_.size(); }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const { return event_before(b, a); }
  };
  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  std::uint64_t next_seq_ = 0;
};

/// Append-only record of processed events.
using EventLog = std::vector<Event>;

}  // namespace qnet::repeater
