#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "betamixer/dataset.hpp"
#include "betamixer/prediction.hpp"

namespace bmx {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct PrecisionRecallF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Undefined ratios (zero denominators) are reported as 0.
PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& counts);

/// Severity weights for grades 0..5. They sum to 0.98 and are used as-is
/// unless `normalized` is set.
struct SeverityWeights {
  std::array<double, 6> values = {0.02, 0.06, 0.12, 0.19, 0.26, 0.33};
  bool normalized = false;

  void validate() const;
  std::array<double, 6> effective() const;
};

double weighted_f1(std::span<const double> per_grade_f1, std::span<const double> weights);

double mse(std::span<const double> truth, std::span<const double> predicted);

/// Per-frame ground truth and prediction for one event type in one video.
struct EventTimeline {
  std::vector<int> true_grades;
  std::vector<int> predicted_grades;
  std::vector<double> true_values;
  std::vector<double> predicted_values;
};

struct PpvNpv {
  /// Severe task: predicted grade >= 3 is a positive call.
  ConfusionCounts severe;
  /// Non-severe task: predicted grade <= 1 is a negative call.
  ConfusionCounts non_severe;
  std::optional<double> ppv;
  std::optional<double> npv;

  PpvNpv& operator+=(const PpvNpv& o);
  void finalize();
};

PpvNpv ppv_npv(const EventTimeline& timeline);

struct CdtResult {
  std::vector<std::int64_t> delays;
  std::int64_t events = 0;
  std::int64_t misses = 0;
  std::optional<double> mean;

  CdtResult& operator+=(const CdtResult& o);
  void finalize();
};

/// Onsets are the first frames of maximal runs of nonzero true grade. An
/// event is detected at the first frame at or after its onset, and before the
/// next onset (or the end of the timeline), with a nonzero predicted grade.
CdtResult cdt(const EventTimeline& timeline);

// ---------------------------------------------------------------------------

struct TypeReport {
  EventKind kind = EventKind::BL;
  ConfusionCounts detection;
  PrecisionRecallF1 scores;
  std::array<double, 6> grade_f1{};
  std::array<ConfusionCounts, 6> grade_counts{};
  double weighted_f1 = 0.0;
  PpvNpv clinical;
  double mse = 0.0;
  /// Only grades that occur in the ground truth.
  std::map<int, double> grade_mse;
  std::map<int, std::int64_t> grade_support;
  CdtResult cdt;
};

struct MetricsReport {
  std::array<TypeReport, kNumEventKinds> types{};
  std::int64_t frames = 0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double weighted_f1 = 0.0;
  std::optional<double> ppv;
  std::optional<double> npv;
  double mse = 0.0;
  /// Per true grade, pooled over event types.
  std::map<int, double> grade_mse;
  std::map<int, std::int64_t> grade_support;
  std::optional<double> cdt_mean;

  const TypeReport& type(EventKind k) const { return types[static_cast<std::size_t>(index_of(k))]; }
};

/// Aligned predictions and labels for every evaluated frame of a video.
struct VideoEvaluation {
  std::string video_id;
  std::vector<PredictionRecord> predictions;
  std::vector<FrameLabels> truth;
};

/// Overall figures are macro averages over the three event types; PPV/NPV and
/// CDT average only the types for which they are defined. MSE compares the
/// predicted severity with the codec's mean for the true grade.
MetricsReport full_report(std::span<const VideoEvaluation> videos, const GradeCodec& codec,
                          const SeverityWeights& weights = {});

std::string report_to_json(const MetricsReport& report);

/// Result tables shaped like the usual comparison tables: one row per model or variant.
using NamedReport = std::pair<std::string, MetricsReport>;
std::string classification_table_csv(std::span<const NamedReport> rows);
std::string summary_table_csv(std::span<const NamedReport> rows);
std::string regression_table_csv(std::span<const NamedReport> rows);
std::string cdt_table_csv(std::span<const NamedReport> rows);

}  // namespace bmx
