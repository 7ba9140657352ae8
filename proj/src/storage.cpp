#include <fstream>
#include <sstream>

#include "betamixer/binary_io.hpp"
#include "betamixer/dataset.hpp"

namespace bmx {

namespace fs = std::filesystem;

void write_frame_tensor(const fs::path& path, const Video& video) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write("BMXF", 4);
  io::put_u32(out, 4);
  io::put_u32(out, static_cast<std::uint32_t>(video.num_frames()));
  io::put_u32(out, static_cast<std::uint32_t>(video.geometry.channels));
  io::put_u32(out, static_cast<std::uint32_t>(video.geometry.height));
  io::put_u32(out, static_cast<std::uint32_t>(video.geometry.width));
  io::put_f32(out, video.frames.data(), static_cast<std::size_t>(video.frames.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Video read_frame_tensor(const fs::path& path, std::string id, std::string source) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  io::expect_magic(in, "BMXF");
  const auto rank = io::get_u32(in, "rank");
  if (rank != 3 && rank != 4) throw FormatError(path.string() + ": frame tensor rank must be 3 or 4");
  std::vector<std::uint32_t> dims(rank);
  for (auto& d : dims) d = io::get_u32(in, "dims");
  Video v;
  v.id = std::move(id);
  v.source = std::move(source);
  v.geometry = rank == 4 ? ImageGeometry{static_cast<int>(dims[1]), static_cast<int>(dims[2]), static_cast<int>(dims[3])}
                         : ImageGeometry{1, static_cast<int>(dims[1]), static_cast<int>(dims[2])};
  v.frames.resize(dims[0], v.geometry.pixels());
  io::get_f32(in, v.frames.data(), static_cast<std::size_t>(v.frames.size()), "frame data");
  return v;
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  auto open = [&](const fs::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    return out;
  };
  {
    auto out = open(dir / "videos.csv");
    const auto idx = dataset.index();
    write_video_index(out, idx);
  }
  {
    auto out = open(dir / "annotations.csv");
    write_annotations_csv(out, dataset.annotations);
  }
  {
    auto out = open(dir / "splits.json");
    out << split_to_json(dataset.split);
  }
  for (const auto& v : dataset.videos) {
    fs::create_directories(dir / v.id, ec);
    if (ec) throw IoError("cannot create " + (dir / v.id).string() + ": " + ec.message());
    write_frame_tensor(dir / v.id / "frames.bmxf", v);
  }
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " does not exist");
  Dataset ds;
  for (const auto& info : load_video_index(dir / "videos.csv")) {
    auto v = read_frame_tensor(dir / info.video_id / "frames.bmxf", info.video_id, info.source);
    if (v.num_frames() != info.frames)
      throw FormatError(info.video_id + ": frame count differs between videos.csv and frames.bmxf");
    ds.videos.push_back(std::move(v));
  }
  ds.annotations = load_annotations(dir / "annotations.csv");
  std::ifstream in(dir / "splits.json");
  if (!in) throw IoError("cannot open " + (dir / "splits.json").string());
  std::stringstream ss;
  ss << in.rdbuf();
  ds.split = split_from_json(ss.str());
  return ds;
}

}  // namespace bmx
