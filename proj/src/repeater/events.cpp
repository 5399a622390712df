#include "qnet/repeater/events.hpp"

#include <stdexcept>
#include <tuple>

namespace qnet::repeater {

const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Attempt: return "attempt";
    case EventKind::Herald: return "herald";
    case EventKind::Store: return "store";
    case EventKind::Expire: return "expire";
    case EventKind::Restart: return "restart";
    case EventKind::Swap: return "swap";
    case EventKind::Readout: return "readout";
    case EventKind::Transfer: return "transfer";
    case EventKind::Done: return "done";
  }
  return "?";
}

bool event_before(const Event& a, const Event& b) {
  return std::tie(a.time, a.node, a.kind, a.seq) < std::tie(b.time, b.node, b.kind, b.seq);
}

void EventQueue::push(double time, std::string node, EventKind kind, std::string detail,
                      std::uint64_t repetition) {
  heap_.push(Event{time, std::move(node), kind, next_seq_++, repetition, std::move(detail)});
}

Event EventQueue::pop() {
  if (heap_.empty()) throw std::logic_error("EventQueue::pop on an empty queue");
  Event e = heap_.top();
  heap_.pop();
  return e;
}

}  // namespace qnet::repeater
