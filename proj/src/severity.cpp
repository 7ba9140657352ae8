#include "betamixer/severity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bmx {

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::BL:
      return "BL";
    case EventKind::MI:
      return "MI";
    case EventKind::TI:
      return "TI";
  }
  return "?";
}

EventKind parse_event_kind(std::string_view text) {
  if (text == "BL") return EventKind::BL;
  if (text == "MI") return EventKind::MI;
  if (text == "TI") return EventKind::TI;
  throw ValidationError("event_type", "unknown event type '" + std::string(text) + "'");
}

SeverityGrade::SeverityGrade(int value, const EventTypeInfo& info) : value_(value) {
  if (info.max_grade < 1) throw ValidationError("max_grade", "must be at least 1");
  if (value < 0 || value > info.max_grade)
    throw ValidationError("severity", "grade " + std::to_string(value) + " outside 0.." +
                                          std::to_string(info.max_grade));
}

void GradeCodec::validate() const {
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw ValidationError("epsilon", "must lie in (0, 0.5)");
  if (!(sigma > 0.0)) throw ValidationError("sigma", "must be positive");
  if (regression_thresholds.empty()) throw ValidationError("regression_thresholds", "must not be empty");
  for (std::size_t i = 0; i < regression_thresholds.size(); ++i) {
    const double t = regression_thresholds[i];
    if (!(t > 0.0 && t < 1.0)) throw ValidationError("regression_thresholds", "values must lie in (0, 1)");
    if (i > 0 && !(t > regression_thresholds[i - 1]))
      throw ValidationError("regression_thresholds", "must be strictly increasing");
  }
  if (!(epsilon < regression_thresholds.front()))
    throw ValidationError("epsilon", "must be below the first regression threshold");
}

double grade_to_mu(SeverityGrade grade, const EventTypeInfo& info, const GradeCodec& codec) {
  if (grade.value() == 0) return codec.epsilon;
  const double m = info.max_grade;
  const double center = (2.0 * grade.value() - 1.0) / (2.0 * m);
  return std::clamp(center, codec.epsilon, 1.0 - codec.epsilon);
}

BetaParams beta_from_moments(double mu, double sigma) {
  if (!(mu > 0.0 && mu < 1.0)) throw DomainError("beta_from_moments: mean must lie in (0, 1)");
  const double var = sigma * sigma;
  if (!(var > 0.0)) throw DomainError("beta_from_moments: standard deviation must be positive");
  if (!(var < mu * (1.0 - mu)))
    throw DomainError("beta_from_moments: variance must be below mu*(1-mu)");
  // alpha = mu^2 ((1-mu)/sigma^2 - 1/mu); beta = alpha (1/mu - 1), the form
  // whose analytic mean is mu.
  const double alpha = mu * mu * ((1.0 - mu) / var - 1.0 / mu);
  const double beta = alpha * (1.0 / mu - 1.0);
  return BetaParams{alpha, beta, mu, sigma};
}

double sample_continuous(const BetaParams& params, std::mt19937_64& rng) {
  std::gamma_distribution<double> ga(params.alpha, 1.0);
  std::gamma_distribution<double> gb(params.beta, 1.0);
  constexpr double lo = std::numeric_limits<double>::min();
  for (;;) {
    const double x = ga(rng);
    const double y = gb(rng);
    const double s = x + y;
    if (!(s > 0.0)) continue;
    const double v = x / s;
    if (v > 0.0 && v < 1.0) return v;
    // Both gammas underflowed to an endpoint; nudge inside the open interval.
    return std::clamp(v, lo, std::nextafter(1.0, 0.0));
  }
}

SeverityGrade discretize(double severity, double presence_prob, const GradeCodec& codec) {
  if (presence_prob < codec.classification_threshold) return SeverityGrade{};
  int grade = 1;
  for (double t : codec.regression_thresholds) {
    if (severity < t) break;
    ++grade;
  }
  return SeverityGrade(grade, EventTypeInfo{EventKind::BL, static_cast<int>(codec.regression_thresholds.size()) + 1});
}

double sample_target(SeverityGrade grade, const GradeCodec& codec, std::mt19937_64& rng,
                     const EventTypeInfo& info) {
  return sample_continuous(beta_from_moments(grade_to_mu(grade, info, codec), codec.sigma), rng);
}

}  // namespace bmx
