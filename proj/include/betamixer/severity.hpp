#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "betamixer/error.hpp"

namespace bmx {

/// Adverse-event categories: bleeding, mechanical injury, thermal injury.
enum class EventKind : std::uint8_t { BL = 0, MI = 1, TI = 2 };

inline constexpr int kNumEventKinds = 3;
inline constexpr std::array<EventKind, kNumEventKinds> kAllEventKinds = {EventKind::BL, EventKind::MI,
                                                                         EventKind::TI};

std::string_view to_string(EventKind kind);
EventKind parse_event_kind(std::string_view text);
inline constexpr int index_of(EventKind kind) { return static_cast<int>(kind); }

struct EventTypeInfo {
  EventKind kind = EventKind::BL;
  int max_grade = 5;
};

/// Ordinal severity label, 0 meaning "no event".
class SeverityGrade {
 public:
  constexpr SeverityGrade() = default;
  SeverityGrade(int value, const EventTypeInfo& info = {});

  constexpr int value() const { return value_; }
  constexpr bool is_event() const { return value_ > 0; }
  friend constexpr bool operator==(SeverityGrade, SeverityGrade) = default;
  friend constexpr auto operator<=>(SeverityGrade, SeverityGrade) = default;

 private:
  int value_ = 0;
};

/// Beta shape parameters together with the moments they were derived from.
struct BetaParams {
  double alpha = 1.0;
  double beta = 1.0;
  double mu = 0.5;
  double sigma = 0.0;

  double mean() const { return alpha / (alpha + beta); }
  double variance() const {
    const double s = alpha + beta;
    return alpha * beta / (s * s * (s + 1.0));
  }
};

/// Encoding/decoding parameters between discrete grades and continuous severities.
struct GradeCodec {
  double epsilon = 0.05;
  double sigma = 0.05;
  double classification_threshold = 0.5;
  std::vector<double> regression_thresholds = {0.2, 0.4, 0.6, 0.8};

  /// Throws ValidationError when the invariants do not hold.
  void validate() const;
};

double grade_to_mu(SeverityGrade grade, const EventTypeInfo& info = {}, const GradeCodec& codec = {});

/// Method-of-moments Beta fit. The mean identity is exact; the variance
/// identity holds to rounding.
BetaParams beta_from_moments(double mu, double sigma);

/// Draws one continuous severity strictly inside (0, 1).
double sample_continuous(const BetaParams& params, std::mt19937_64& rng);

SeverityGrade discretize(double severity, double presence_prob, const GradeCodec& codec = {});

inline double to_scale5(double severity) { return severity * 5.0; }
inline double from_scale5(double severity) { return severity / 5.0; }

/// Convenience: sample a continuous target for a grade using codec defaults.
double sample_target(SeverityGrade grade, const GradeCodec& codec, std::mt19937_64& rng,
                     const EventTypeInfo& info = {});

}  // namespace bmx
