#pragma once

#include <string>
#include <utility>
#include <vector>

namespace ingvio {

struct Event {
  double t = 0.0;
  std::string kind;
  std::string detail;
};

/// Append-only log of filter decisions (gating, marginalization, initialization).
class EventLog {
 public:
  void add(double t, std::string kind, std::string detail = {}) {
    events_.push_back({t, std::move(kind), std::move(detail)});
  }
  const std::vector<Event>& events() const { return events_; }
  void clear() { events_.clear(); }

 private:
  std::vector<Event> events_;
};

inline void log_event(EventLog* log, double t, std::string kind, std::string detail = {}) {
  if (log) log->add(t, std::move(kind), std::move(detail));
}

}  // namespace ingvio
