#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "betamixer/nn/tensor.hpp"
#include "betamixer/severity.hpp"

namespace bmx {

using FrameMatrix = nn::Matrix<float>;

// ---------------------------------------------------------------------------
// Annotations and per-frame labels

/// One adverse-event interval, inclusive on both ends.
struct EventAnnotation {
  std::string video_id;
  EventKind event_type = EventKind::BL;
  SeverityGrade grade;
  std::int64_t start_frame = 0;
  std::int64_t end_frame = 0;

  friend bool operator==(const EventAnnotation&, const EventAnnotation&) = default;
};

inline constexpr std::string_view kAnnotationHeader = "video_id,event_type,severity,start_frame,end_frame";

std::vector<EventAnnotation> parse_annotations_csv(std::istream& in);
std::vector<EventAnnotation> parse_annotations_json(std::string_view text);
/// Dispatches on extension: `.json` reads the JSON mirror, anything else CSV.
std::vector<EventAnnotation> load_annotations(const std::filesystem::path& path);
void write_annotations_csv(std::ostream& out, std::span<const EventAnnotation> annotations);

struct FrameLabel {
  bool present = false;
  SeverityGrade grade;
  friend bool operator==(const FrameLabel&, const FrameLabel&) = default;
};
using FrameLabels = std::array<FrameLabel, kNumEventKinds>;

/// Labels of one frame: per type, presence and the max grade over covering
/// annotations of that type.
FrameLabels frame_labels(std::span<const EventAnnotation> annotations, std::string_view video_id,
                         std::int64_t frame_index);

/// frame_labels for every frame of a video in one pass.
std::vector<FrameLabels> label_timeline(std::span<const EventAnnotation> annotations, std::string_view video_id,
                                        std::int64_t num_frames);

// ---------------------------------------------------------------------------
// Videos and clips

struct ImageGeometry {
  int channels = 1;
  int height = 32;
  int width = 32;
  nn::Index pixels() const { return static_cast<nn::Index>(channels) * height * width; }
  friend bool operator==(const ImageGeometry&, const ImageGeometry&) = default;
};

/// A decoded video: one row per frame, pixels in [0, 1] laid out C, H, W.
struct Video {
  std::string id;
  std::string source;
  ImageGeometry geometry;
  FrameMatrix frames;

  nn::Index num_frames() const { return frames.rows(); }
};

struct FrameRecord {
  const Video* video = nullptr;
  nn::Index frame_index = 0;
  auto image() const { return video->frames.row(frame_index); }
};

/// k consecutive frames ending at `end_frame`, labelled by the final frame.
struct ClipSample {
  const Video* video = nullptr;
  nn::Index end_frame = 0;
  nn::Index length = 1;
  FrameLabels labels{};

  nn::Index first_frame() const { return end_frame - length + 1; }
  FrameRecord frame(nn::Index i) const { return {video, first_frame() + i}; }
  auto images() const { return video->frames.middleRows(first_frame(), length); }
};

/// Clips ending at frames k-1, k-1+stride, ...; none when the video is shorter than k.
std::vector<ClipSample> make_clips(const Video& video, std::span<const FrameLabels> timeline, nn::Index k,
                                   nn::Index stride = 1);

// ---------------------------------------------------------------------------
// Splits

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  /// Throws ValidationError if a video appears in more than one split.
  void validate() const;
};

/// Deterministic by-video split with the given train/val fractions; the test
/// split receives the remainder.
DatasetSplit make_split(std::vector<std::string> video_ids, double train_fraction, double val_fraction,
                        std::uint64_t seed);
std::string split_to_json(const DatasetSplit& split);
DatasetSplit split_from_json(std::string_view text);

// ---------------------------------------------------------------------------
// Balanced sampling

/// Draws clip indices so that every occupied (type, grade) cell, plus the
/// normal cell, is equally likely; uniform within a cell. A clip carrying
/// several events belongs to each of its cells.
class BalancedSampler {
 public:
  static constexpr int kNormalCell = 0;
  static int cell_of(EventKind kind, int grade) { return 1 + index_of(kind) * 5 + (grade - 1); }

  BalancedSampler(std::span<const FrameLabels> clip_labels, std::uint64_t seed);

  std::size_t next();
  const std::vector<int>& occupied_cells() const { return cells_; }
  const std::vector<std::size_t>& members(int cell) const { return members_.at(cell); }

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::vector<int> cells_;
  std::map<int, std::vector<std::size_t>> members_;
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Class statistics

struct VideoInfo {
  std::string video_id;
  std::string source;
  std::int64_t frames = 0;
};

struct SourceStats {
  std::int64_t cases = 0;
  std::int64_t frames = 0;
  std::int64_t normal = 0;
  std::array<std::int64_t, kNumEventKinds> event_frames{};
};

struct ClassBalanceTable {
  /// (type, grade) -> frame count; a frame counts once per type at its max grade.
  std::map<std::pair<EventKind, int>, std::int64_t> counts;
  std::map<std::string, SourceStats> sources;
  std::int64_t total_frames = 0;
  std::int64_t normal_frames = 0;

  std::int64_t event_frames(EventKind kind) const;
};

ClassBalanceTable class_stats(std::span<const EventAnnotation> annotations, std::span<const VideoInfo> videos);
void print_class_stats(std::ostream& out, const ClassBalanceTable& table);
std::vector<VideoInfo> load_video_index(const std::filesystem::path& path);
void write_video_index(std::ostream& out, std::span<const VideoInfo> videos);

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SyntheticConfig {
  int n_videos = 112;
  int frames_per_video = 100;
  int image_size = 32;
  /// Per type, probability that an event starts at a given idle frame.
  std::array<double, kNumEventKinds> event_rate = {0.025, 0.025, 0.025};
  /// Relative frequency of grades 1..5.
  std::array<double, 5> grade_weights = {0.3, 0.25, 0.2, 0.15, 0.1};
  int min_duration = 16;
  int max_duration = 40;
  int min_gap = 6;
  double background_level = 0.5;
  /// Amplitude of the per-video sinusoidal background texture.
  double background_texture = 0.03;
  double noise_std = 0.08;
  double amplitude_base = 0.12;
  double amplitude_step = 0.07;
  /// Uniform offset, in pixels of a 32-pixel frame, of a motif around its type's anchor.
  double position_jitter = 1.5;
  /// Frames over which an event's motif ramps from half to full strength.
  int ramp_frames = 1;
  /// Probability that an event's motif is hidden in a given frame.
  double occlusion_prob = 0.25;
  double train_fraction = 4.0 / 7.0;
  double val_fraction = 1.0 / 7.0;
  std::uint64_t seed = 7;

  void validate() const;
  double motif_amplitude(int grade) const { return amplitude_base + amplitude_step * grade; }
};

struct Dataset {
  std::vector<Video> videos;
  std::vector<EventAnnotation> annotations;
  DatasetSplit split;

  const Video& video(std::string_view id) const;
  std::vector<VideoInfo> index() const;
  /// Label timelines for every video, keyed by id.
  std::map<std::string, std::vector<FrameLabels>> timelines() const;
};

Dataset synthesize_dataset(const SyntheticConfig& config);

// ---------------------------------------------------------------------------
// Storage

/// Little-endian float tensor file: "BMXF", u32 rank, u32 dims, f32 data.
void write_frame_tensor(const std::filesystem::path& path, const Video& video);
Video read_frame_tensor(const std::filesystem::path& path, std::string id, std::string source);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace bmx
