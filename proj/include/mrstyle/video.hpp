#pragma once

#include <filesystem>
#include <vector>

#include "mrstyle/image.hpp"
#include "mrstyle/irstyle.hpp"

namespace mrstyle {

inline constexpr double kDefaultSceneThreshold = 0.3;

/// Half-open frame range [begin, end).
struct Segment {
    int begin = 0;
    int end = 0;

    bool operator==(const Segment&) const = default;
};

/// Contiguous, non-overlapping, covers every frame.
using SceneSegments = std::vector<Segment>;

/// A new scene starts at frame i when the Lab histogram distance between
/// frames i-1 and i exceeds `threshold`.
SceneSegments segment_scenes(const std::vector<Image>& frames, double threshold = kDefaultSceneThreshold);

struct VideoResult {
    std::vector<Image> frames;
    SceneSegments segments;
    std::vector<LutSet> luts;  // one per segment
};

/// Predicts one LUT set per scene from its first frame and applies it to
/// every frame of the scene.
VideoResult transfer_video(const std::vector<Image>& frames, const Image& style, const IrStyleModel& model,
                           double threshold = kDefaultSceneThreshold, int threads = 1);

/// Frames named frame_000000.ppm, frame_000001.png, ... in index order.
std::vector<Image> read_frames(const std::filesystem::path& dir);
void write_frames(const std::vector<Image>& frames, const std::filesystem::path& dir);
std::string frame_name(int index, const char* extension = ".ppm");

}  // namespace mrstyle
