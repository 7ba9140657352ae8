#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "betamixer/dataset.hpp"

namespace bmx {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    const auto comma = line.find(',', pos);
    out.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::int64_t parse_int(std::string_view text, std::size_t line, const char* field) {
  std::int64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end || text.empty())
    throw ParseError(line, std::string(field) + ": '" + std::string(text) + "' is not an integer");
  return v;
}

EventAnnotation make_annotation(std::string video_id, std::string_view type, std::int64_t grade, std::int64_t start,
                                std::int64_t end, std::size_t line) {
  const std::string where = "line " + std::to_string(line) + ": ";
  if (video_id.empty()) throw ValidationError("video_id", where + "must not be empty");
  EventAnnotation a;
  a.video_id = std::move(video_id);
  try {
    a.event_type = parse_event_kind(type);
  } catch (const ValidationError& e) {
    throw ValidationError("event_type", where + e.what());
  }
  if (grade < 1 || grade > 5) throw ValidationError("severity", where + "annotated grade must lie in 1..5");
  a.grade = SeverityGrade(static_cast<int>(grade));
  if (start < 0) throw ValidationError("start_frame", where + "must be non-negative");
  if (start > end) throw ValidationError("start_frame", where + "start_frame exceeds end_frame");
  a.start_frame = start;
  a.end_frame = end;
  return a;
}

}  // namespace

std::vector<EventAnnotation> parse_annotations_csv(std::istream& in) {
  std::vector<EventAnnotation> out;
  std::string raw;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kAnnotationHeader)
        throw ParseError(line_no, "expected header '" + std::string(kAnnotationHeader) + "'");
      header_seen = true;
      continue;
    }
    const auto f = split_commas(line);
    if (f.size() != 5) throw ParseError(line_no, "expected 5 fields, found " + std::to_string(f.size()));
    out.push_back(make_annotation(std::string(f[0]), f[1], parse_int(f[2], line_no, "severity"),
                                  parse_int(f[3], line_no, "start_frame"), parse_int(f[4], line_no, "end_frame"),
                                  line_no));
  }
  if (!header_seen) throw ParseError(line_no, "missing header");
  return out;
}

std::vector<EventAnnotation> parse_annotations_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(0, e.what());
  }
  if (!doc.is_array()) throw ParseError(0, "annotation JSON must be an array");
  std::vector<EventAnnotation> out;
  std::size_t row = 0;
  for (const auto& item : doc) {
    ++row;
    try {
      out.push_back(make_annotation(item.at("video_id").get<std::string>(), item.at("event_type").get<std::string>(),
                                    item.at("severity").get<std::int64_t>(), item.at("start_frame").get<std::int64_t>(),
                                    item.at("end_frame").get<std::int64_t>(), row));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(row, e.what());
    }
  }
  return out;
}

std::vector<EventAnnotation> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations file " + path.string());
  if (path.extension() == ".json") {
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_annotations_json(ss.str());
  }
  return parse_annotations_csv(in);
}

void write_annotations_csv(std::ostream& out, std::span<const EventAnnotation> annotations) {
  out << kAnnotationHeader << '\n';
  for (const auto& a : annotations)
    out << a.video_id << ',' << to_string(a.event_type) << ',' << a.grade.value() << ',' << a.start_frame << ','
        << a.end_frame << '\n';
}

FrameLabels frame_labels(std::span<const EventAnnotation> annotations, std::string_view video_id,
                         std::int64_t frame_index) {
  FrameLabels labels{};
  for (const auto& a : annotations) {
    if (a.video_id != video_id || frame_index < a.start_frame || frame_index > a.end_frame) continue;
    auto& l = labels[static_cast<std::size_t>(index_of(a.event_type))];
    l.present = true;
    l.grade = std::max(l.grade, a.grade);
  }
  return labels;
}

std::vector<FrameLabels> label_timeline(std::span<const EventAnnotation> annotations, std::string_view video_id,
                                        std::int64_t num_frames) {
  std::vector<FrameLabels> out(static_cast<std::size_t>(std::max<std::int64_t>(num_frames, 0)));
  for (const auto& a : annotations) {
    if (a.video_id != video_id) continue;
    const auto lo = std::max<std::int64_t>(a.start_frame, 0);
    const auto hi = std::min<std::int64_t>(a.end_frame, num_frames - 1);
    for (auto f = lo; f <= hi; ++f) {
      auto& l = out[static_cast<std::size_t>(f)][static_cast<std::size_t>(index_of(a.event_type))];
      l.present = true;
      l.grade = std::max(l.grade, a.grade);
    }
  }
  return out;
}

std::vector<ClipSample> make_clips(const Video& video, std::span<const FrameLabels> timeline, nn::Index k,
                                   nn::Index stride) {
  if (k < 1 || stride < 1) throw ValidationError("clip_length", "clip length and stride must be >= 1");
  if (static_cast<nn::Index>(timeline.size()) != video.num_frames())
    throw ShapeError("make_clips: label timeline length differs from frame count of " + video.id);
  std::vector<ClipSample> clips;
  for (nn::Index end = k - 1; end < video.num_frames(); end += stride)
    clips.push_back(ClipSample{&video, end, k, timeline[static_cast<std::size_t>(end)]});
  return clips;
}

// ---------------------------------------------------------------------------

void DatasetSplit::validate() const {
  std::map<std::string, int> seen;
  for (const auto* part : {&train, &val, &test})
    for (const auto& id : *part)
      if (++seen[id] > 1) throw ValidationError("split", "video '" + id + "' appears in more than one split");
}

DatasetSplit make_split(std::vector<std::string> video_ids, double train_fraction, double val_fraction,
                        std::uint64_t seed) {
  std::sort(video_ids.begin(), video_ids.end());
  video_ids.erase(std::unique(video_ids.begin(), video_ids.end()), video_ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(video_ids.begin(), video_ids.end(), rng);
  const auto n = video_ids.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  const auto n_val = std::min(n - std::min(n, n_train),
                              static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n))));
  DatasetSplit s;
  for (std::size_t i = 0; i < n; ++i) {
    auto& part = i < n_train ? s.train : (i < n_train + n_val ? s.val : s.test);
    part.push_back(video_ids[i]);
  }
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

std::string split_to_json(const DatasetSplit& split) {
  nlohmann::ordered_json j;
  j["train"] = split.train;
  j["val"] = split.val;
  j["test"] = split.test;
  return j.dump(2) + "\n";
}

DatasetSplit split_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    DatasetSplit s;
    s.train = j.at("train").get<std::vector<std::string>>();
    s.val = j.at("val").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("split file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

BalancedSampler::BalancedSampler(std::span<const FrameLabels> clip_labels, std::uint64_t seed) : rng_(seed) {
  if (clip_labels.empty()) throw Error("balanced sampler: no clips to sample from");
  for (std::size_t i = 0; i < clip_labels.size(); ++i) {
    bool any = false;
    for (EventKind kind : kAllEventKinds) {
      const auto& l = clip_labels[i][static_cast<std::size_t>(index_of(kind))];
      if (!l.present) continue;
      any = true;
      members_[cell_of(kind, l.grade.value())].push_back(i);
    }
    if (!any) members_[kNormalCell].push_back(i);
  }
  for (const auto& [cell, m] : members_) cells_.push_back(cell);
}

std::size_t BalancedSampler::next() {
  std::uniform_int_distribution<std::size_t> pick_cell(0, cells_.size() - 1);
  const auto& m = members_[cells_[pick_cell(rng_)]];
  std::uniform_int_distribution<std::size_t> pick(0, m.size() - 1);
  return m[pick(rng_)];
}

std::string BalancedSampler::state() const {
  std::ostringstream ss;
  ss << rng_;
  return ss.str();
}

void BalancedSampler::restore(const std::string& state) {
  std::istringstream ss(state);
  ss >> rng_;
  if (!ss) throw FormatError("invalid sampler state");
}

}  // namespace bmx
