#pragma once

#include <string>
#include <string_view>

#include "json.hpp"

#include "angdiff/common.hpp"

namespace angdiff {

enum class ScheduleKind { linear_alpha_bar, cosine };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(std::string_view name);

// Smallest alpha_bar a schedule may hold. Keeps 1/cos(phi) and 1/alpha_bar
// finite at the pure-noise end.
inline constexpr double kAlphaBarFloor = 1e-9;

// Discrete noise schedule, stored as a precomputed table alpha_bar[0..T]
// with alpha_bar[0] = 1 (clean data) and alpha_bar[T] at the floor.
//
// The angular view of the same table: cos(phi_t) = sqrt(alpha_bar_t),
// sin(phi_t) = sqrt(1 - alpha_bar_t). Immutable after construction.
class Schedule {
 public:
  static Schedule make(ScheduleKind kind, int steps);
  // Arbitrary table; validated against the schedule invariants.
  static Schedule from_table(ScheduleKind kind, Vec alpha_bar);

  int steps() const { return static_cast<int>(alpha_bar_.size()) - 1; }
  ScheduleKind kind() const { return kind_; }

  double alpha_bar(int t) const;
  double cos_phase(int t) const;
  double sin_phase(int t) const;
  // phi_t in [0, pi/2].
  double phase(int t) const;

  const Vec& table() const { return alpha_bar_; }

  nlohmann::json to_json() const;
  static Schedule from_json(const nlohmann::json& j);

 private:
  Schedule(ScheduleKind kind, Vec alpha_bar);
  void check_step(int t) const;

  ScheduleKind kind_;
  Vec alpha_bar_;
  Vec cos_;
  Vec sin_;
};

inline Schedule make_schedule(ScheduleKind kind, int steps) {
  return Schedule::make(kind, steps);
}

inline double phase_of(const Schedule& s, int t) { return s.phase(t); }

// cos(phi_t) x + sin(phi_t) eps, elementwise.
Vec forward_diffuse(const Schedule& s, int t, ConstSpan x, ConstSpan eps);

}  // namespace angdiff
