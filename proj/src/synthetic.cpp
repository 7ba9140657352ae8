#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "betamixer/dataset.hpp"

namespace bmx {

void SyntheticConfig::validate() const {
  if (n_videos < 1) throw ValidationError("n_videos", "must be >= 1");
  if (frames_per_video < 1) throw ValidationError("frames_per_video", "must be >= 1");
  if (image_size < 8) throw ValidationError("image_size", "must be >= 8");
  for (double r : event_rate)
    if (!(r >= 0.0 && r <= 1.0)) throw ValidationError("event_rate", "must lie in [0, 1]");
  double wsum = 0.0;
  for (double w : grade_weights) {
    if (!(w >= 0.0)) throw ValidationError("grade_weights", "must be non-negative");
    wsum += w;
  }
  if (!(wsum > 0.0)) throw ValidationError("grade_weights", "must not all be zero");
  if (min_duration < 1 || max_duration < min_duration)
    throw ValidationError("min_duration", "need 1 <= min_duration <= max_duration");
  if (min_gap < 0) throw ValidationError("min_gap", "must be non-negative");
  if (!(background_texture >= 0.0)) throw ValidationError("background_texture", "must be non-negative");
  if (!(noise_std >= 0.0)) throw ValidationError("noise_std", "must be non-negative");
  if (!(amplitude_step > 0.0)) throw ValidationError("amplitude_step", "signal must increase strictly with grade");
  if (!(amplitude_base + amplitude_step > 0.0)) throw ValidationError("amplitude_base", "grade-1 amplitude must be positive");
  if (!(position_jitter >= 0.0 && position_jitter <= 3.0))
    throw ValidationError("position_jitter", "must lie in [0, 3]");
  if (ramp_frames < 0) throw ValidationError("ramp_frames", "must be non-negative");
  if (!(occlusion_prob >= 0.0 && occlusion_prob < 1.0)) throw ValidationError("occlusion_prob", "must lie in [0, 1)");
  if (!(train_fraction > 0.0 && val_fraction >= 0.0 && train_fraction + val_fraction <= 1.0))
    throw ValidationError("train_fraction", "split fractions must be positive and sum to at most 1");
}

namespace {

// Motif centres per event type on the 32-pixel reference grid.
constexpr std::array<std::array<double, 2>, kNumEventKinds> kAnchors = {{{8.0, 8.0}, {25.0, 11.0}, {13.0, 23.0}}};

struct InjectedEvent {
  EventKind kind;
  int grade;
  int start;
  int end;
  double cx;
  double cy;
};

void draw_motif(float* img, int size, const InjectedEvent& e, double amplitude) {
  const double unit = size / 32.0;
  const double r = (2.0 + 0.8 * e.grade) * unit;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = x - e.cx;
      const double dy = y - e.cy;
      const double d = std::sqrt(dx * dx + dy * dy);
      float& px = img[y * size + x];
      switch (e.kind) {
        case EventKind::BL:
          if (d <= r) px += static_cast<float>(amplitude);
          break;
        case EventKind::MI: {
          if (std::abs(dx) <= 1.5 * unit && std::abs(dy) <= r + 1.0 * unit) px -= static_cast<float>(amplitude);
          break;
        }
        case EventKind::TI:
          if (d >= r - 1.5 * unit && d <= r + 0.5 * unit) px += static_cast<float>(amplitude);
          break;
      }
    }
}

}  // namespace

Dataset synthesize_dataset(const SyntheticConfig& config) {
  config.validate();
  const int size = config.image_size;
  const int n = config.frames_per_video;
  Dataset ds;
  std::vector<std::string> ids;
  for (int v = 0; v < config.n_videos; ++v) {
    std::seed_seq seq{static_cast<std::uint64_t>(config.seed), static_cast<std::uint64_t>(v)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::discrete_distribution<int> grade_dist(config.grade_weights.begin(), config.grade_weights.end());
    std::uniform_int_distribution<int> duration(config.min_duration, config.max_duration);

    Video video;
    video.id = fmt::format("vid{:03d}", v + 1);
    video.source = v % 2 == 0 ? "siteA" : "siteB";
    video.geometry = ImageGeometry{1, size, size};
    video.frames.resize(n, video.geometry.pixels());

    std::vector<InjectedEvent> events;
    for (EventKind kind : kAllEventKinds) {
      const double rate = config.event_rate[static_cast<std::size_t>(index_of(kind))];
      int t = 0;
      while (t < n) {
        if (rate > 0.0 && unif(rng) < rate) {
          InjectedEvent e{};
          e.kind = kind;
          e.grade = grade_dist(rng) + 1;
          e.start = t;
          e.end = std::min(n - 1, t + duration(rng) - 1);
          const auto& anchor = kAnchors[static_cast<std::size_t>(index_of(kind))];
          const double unit = size / 32.0;
          e.cx = (anchor[0] + config.position_jitter * (2.0 * unif(rng) - 1.0)) * unit;
          e.cy = (anchor[1] + config.position_jitter * (2.0 * unif(rng) - 1.0)) * unit;
          events.push_back(e);
          t = e.end + 1 + config.min_gap;
        } else {
          ++t;
        }
      }
    }

    // Static textured background for the whole video.
    const double phase = unif(rng) * 2.0 * std::numbers::pi;
    const double fx = 1.0 + 2.0 * unif(rng);
    const double fy = 1.0 + 2.0 * unif(rng);
    std::vector<float> background(static_cast<std::size_t>(size * size));
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        background[static_cast<std::size_t>(y * size + x)] = static_cast<float>(
            config.background_level + config.background_texture * std::sin(2.0 * std::numbers::pi * (fx * x + fy * y) / size + phase));

    for (int f = 0; f < n; ++f) {
      float* img = video.frames.row(f).data();
      for (int i = 0; i < size * size; ++i)
        img[i] = background[static_cast<std::size_t>(i)] + static_cast<float>(config.noise_std * noise(rng));
      for (const auto& e : events) {
        if (f < e.start || f > e.end) continue;
        const bool visible = unif(rng) >= config.occlusion_prob;
        if (!visible) continue;
        const int j = f - e.start;
        const double ramp =
            config.ramp_frames > 0 ? std::min(1.0, 0.5 + 0.5 * static_cast<double>(j) / config.ramp_frames) : 1.0;
        draw_motif(img, size, e, config.motif_amplitude(e.grade) * ramp);
      }
      for (int i = 0; i < size * size; ++i) img[i] = std::clamp(img[i], 0.0f, 1.0f);
    }

    std::sort(events.begin(), events.end(), [](const InjectedEvent& a, const InjectedEvent& b) {
      return std::tie(a.start, a.kind) < std::tie(b.start, b.kind);
    });
    for (const auto& e : events)
      ds.annotations.push_back(EventAnnotation{video.id, e.kind, SeverityGrade(e.grade), e.start, e.end});
    ids.push_back(video.id);
    ds.videos.push_back(std::move(video));
  }
  ds.split = make_split(ids, config.train_fraction, config.val_fraction, config.seed);
  return ds;
}

const Video& Dataset::video(std::string_view id) const {
  for (const auto& v : videos)
    if (v.id == id) return v;
  throw Error("dataset has no video '" + std::string(id) + "'");
}

std::vector<VideoInfo> Dataset::index() const {
  std::vector<VideoInfo> out;
  for (const auto& v : videos) out.push_back({v.id, v.source, v.num_frames()});
  return out;
}

std::map<std::string, std::vector<FrameLabels>> Dataset::timelines() const {
  std::map<std::string, std::vector<FrameLabels>> out;
  for (const auto& v : videos) out[v.id] = label_timeline(annotations, v.id, v.num_frames());
  return out;
}

}  // namespace bmx
