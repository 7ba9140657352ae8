#include <fstream>
#include <ostream>

#include <fmt/format.h>

#include "betamixer/dataset.hpp"

namespace bmx {

std::int64_t ClassBalanceTable::event_frames(EventKind kind) const {
  std::int64_t total = 0;
  for (const auto& [key, n] : counts)
    if (key.first == kind) total += n;
  return total;
}

ClassBalanceTable class_stats(std::span<const EventAnnotation> annotations, std::span<const VideoInfo> videos) {
  std::map<std::string, std::vector<EventAnnotation>> by_video;
  for (const auto& a : annotations) by_video[a.video_id].push_back(a);

  ClassBalanceTable table;
  for (const auto& v : videos) {
    auto& src = table.sources[v.source];
    ++src.cases;
    src.frames += v.frames;
    table.total_frames += v.frames;
    std::int64_t labelled = 0;
    const auto it = by_video.find(v.video_id);
    if (it != by_video.end()) {
      for (const auto& labels : label_timeline(it->second, v.video_id, v.frames)) {
        bool any = false;
        for (EventKind kind : kAllEventKinds) {
          const auto& l = labels[static_cast<std::size_t>(index_of(kind))];
          if (!l.present) continue;
          any = true;
          ++table.counts[{kind, l.grade.value()}];
          ++src.event_frames[static_cast<std::size_t>(index_of(kind))];
        }
        labelled += any ? 1 : 0;
      }
    }
    src.normal += v.frames - labelled;
    table.normal_frames += v.frames - labelled;
  }
  return table;
}

void print_class_stats(std::ostream& out, const ClassBalanceTable& table) {
  out << fmt::format("{:<12} {:>6} {:>10} {:>10} {:>9} {:>9} {:>9}\n", "source", "cases", "frames", "normal", "BL",
                     "MI", "TI");
  for (const auto& [name, s] : table.sources)
    out << fmt::format("{:<12} {:>6} {:>10} {:>10} {:>9} {:>9} {:>9}\n", name, s.cases, s.frames, s.normal,
                       s.event_frames[0], s.event_frames[1], s.event_frames[2]);
  out << "grade counts (type,grade:frames):";
  for (const auto& [key, n] : table.counts) out << ' ' << to_string(key.first) << ',' << key.second << ':' << n;
  out << '\n';
}

std::vector<VideoInfo> load_video_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open video index " + path.string());
  std::vector<VideoInfo> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "video_id,source,frames") throw ParseError(line_no, "expected header 'video_id,source,frames'");
      continue;
    }
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) throw ParseError(line_no, "expected 3 fields");
    VideoInfo v;
    v.video_id = line.substr(0, c1);
    v.source = line.substr(c1 + 1, c2 - c1 - 1);
    try {
      std::size_t used = 0;
      v.frames = std::stoll(line.substr(c2 + 1), &used);
      if (used != line.size() - c2 - 1) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ParseError(line_no, "frames: not an integer");
    }
    if (v.frames < 0) throw ValidationError("frames", "line " + std::to_string(line_no) + ": must be non-negative");
    out.push_back(std::move(v));
  }
  return out;
}

void write_video_index(std::ostream& out, std::span<const VideoInfo> videos) {
  out << "video_id,source,frames\n";
  for (const auto& v : videos) out << v.video_id << ',' << v.source << ',' << v.frames << '\n';
}

}  // namespace bmx
