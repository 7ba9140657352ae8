#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "betamixer/severity.hpp"

namespace bmx {

/// Model output for one frame: per event type, detection probability and
/// continuous severity on the normalized [0, 1] scale.
struct PredictionRecord {
  std::string video_id;
  std::int64_t frame_index = 0;
  std::array<double, kNumEventKinds> presence{};
  std::array<double, kNumEventKinds> severity{};

  double presence_of(EventKind k) const { return presence[static_cast<std::size_t>(index_of(k))]; }
  double severity_of(EventKind k) const { return severity[static_cast<std::size_t>(index_of(k))]; }
};

}  // namespace bmx
