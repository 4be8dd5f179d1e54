#include "angdiff/schedule.hpp"

#include <cmath>
#include <numbers>

namespace angdiff {

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::linear_alpha_bar:
      return "linear-alpha-bar";
    case ScheduleKind::cosine:
      return "cosine";
  }
  return "unknown";
}

ScheduleKind schedule_kind_from_string(std::string_view name) {
  if (name == "cosine") return ScheduleKind::cosine;
  if (name == "linear-alpha-bar" || name == "linear") return ScheduleKind::linear_alpha_bar;
  throw std::invalid_argument("unknown schedule kind: " + std::string(name));
}

Schedule::Schedule(ScheduleKind kind, Vec alpha_bar)
    : kind_(kind), alpha_bar_(std::move(alpha_bar)) {
  require(alpha_bar_.size() >= 2, "schedule needs at least one diffusion step");
  require(alpha_bar_.front() == 1.0, "schedule: alpha_bar[0] must be 1");
  for (std::size_t t = 0; t < alpha_bar_.size(); ++t) {
    const double a = alpha_bar_[t];
    require(std::isfinite(a) && a >= kAlphaBarFloor && a <= 1.0,
            "schedule: alpha_bar[" + std::to_string(t) + "] outside [floor, 1]");
    if (t > 0) {
      require(a < alpha_bar_[t - 1],
              "schedule: alpha_bar must be strictly decreasing (step " + std::to_string(t) +
                  ")");
    }
  }
  cos_.resize(alpha_bar_.size());
  sin_.resize(alpha_bar_.size());
  for (std::size_t t = 0; t < alpha_bar_.size(); ++t) {
    cos_[t] = std::sqrt(alpha_bar_[t]);
    sin_[t] = std::sqrt(1.0 - alpha_bar_[t]);
  }
}

Schedule Schedule::make(ScheduleKind kind, int steps) {
  require(steps >= 1, "make_schedule: T must be >= 1");
  Vec table(static_cast<std::size_t>(steps) + 1);
  table[0] = 1.0;
  for (int t = 1; t <= steps; ++t) {
    double a = 0.0;
    if (kind == ScheduleKind::cosine) {
      // Evaluated in long double so the t = T/2 point lands on 0.5.
      const long double c =
          std::cos(static_cast<long double>(t) / steps * std::numbers::pi_v<long double> / 2);
      a = static_cast<double>(c * c);
    } else {
      a = 1.0 - static_cast<double>(t) / steps;
    }
    if (t == steps) {
      a = kAlphaBarFloor;
    } else if (a <= kAlphaBarFloor) {
      throw std::invalid_argument("make_schedule: T=" + std::to_string(steps) +
                                  " reaches the alpha_bar floor before the last step");
    }
    table[static_cast<std::size_t>(t)] = a;
  }
  return Schedule(kind, std::move(table));
}

Schedule Schedule::from_table(ScheduleKind kind, Vec alpha_bar) {
  return Schedule(kind, std::move(alpha_bar));
}

void Schedule::check_step(int t) const {
  if (t < 0 || t > steps()) {
    throw std::out_of_range("schedule step " + std::to_string(t) + " outside [0, " +
                            std::to_string(steps()) + "]");
  }
}

double Schedule::alpha_bar(int t) const {
  check_step(t);
  return alpha_bar_[static_cast<std::size_t>(t)];
}

double Schedule::cos_phase(int t) const {
  check_step(t);
  return cos_[static_cast<std::size_t>(t)];
}

double Schedule::sin_phase(int t) const {
  check_step(t);
  return sin_[static_cast<std::size_t>(t)];
}

double Schedule::phase(int t) const {
  check_step(t);
  // atan2 is well conditioned at both ends, unlike acos near 1.
  return std::atan2(sin_[static_cast<std::size_t>(t)], cos_[static_cast<std::size_t>(t)]);
}

nlohmann::json Schedule::to_json() const {
  return {{"kind", to_string(kind_)}, {"T", steps()}, {"alpha_bar", alpha_bar_}};
}

Schedule Schedule::from_json(const nlohmann::json& j) {
  const auto kind = schedule_kind_from_string(j.at("kind").get<std::string>());
  const int steps = j.at("T").get<int>();
  Vec table = j.at("alpha_bar").get<Vec>();
  require(static_cast<int>(table.size()) == steps + 1, "schedule json: alpha_bar length != T+1");
  return Schedule(kind, std::move(table));
}

Vec forward_diffuse(const Schedule& s, int t, ConstSpan x, ConstSpan eps) {
  require_same_size(x, eps, "forward_diffuse");
  const double c = s.cos_phase(t);
  const double sn = s.sin_phase(t);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = c * x[i] + sn * eps[i];
  return out;
}

}  // namespace angdiff
