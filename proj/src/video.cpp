#include "mrstyle/video.hpp"

#include <cstdio>
#include <map>
#include <stdexcept>

#include "mrstyle/metrics.hpp"

namespace mrstyle {

SceneSegments segment_scenes(const std::vector<Image>& frames, double threshold) {
    if (frames.empty()) throw std::invalid_argument("segment_scenes on an empty clip");
    SceneSegments segments{{0, 1}};
    for (std::size_t i = 1; i < frames.size(); ++i) {
        const int idx = static_cast<int>(i);
        if (lab_histogram_distance(frames[i - 1], frames[i]) > threshold)
            segments.push_back({idx, idx + 1});
        else
            segments.back().end = idx + 1;
    }
    return segments;
}

VideoResult transfer_video(const std::vector<Image>& frames, const Image& style, const IrStyleModel& model,
                           double threshold, int threads) {
    VideoResult result;
    result.segments = segment_scenes(frames, threshold);
    const int t = model.config().encoder.thumbnail;
    const Image style_thumb = make_thumbnail(style, t);
    result.frames.reserve(frames.size());
    for (const Segment& seg : result.segments) {
        LutSet luts = predict_luts(make_thumbnail(frames[static_cast<std::size_t>(seg.begin)], t), style_thumb, model);
        for (int i = seg.begin; i < seg.end; ++i)
            result.frames.push_back(render(frames[static_cast<std::size_t>(i)], luts, threads));
        result.luts.push_back(std::move(luts));
    }
    return result;
}

std::string frame_name(int index, const char* extension) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%06d", index);
    return std::string(buf) + extension;
}

std::vector<Image> read_frames(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::map<int, std::filesystem::path> numbered;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string stem = entry.path().stem().string();
        const std::string ext = entry.path().extension().string();
        if (stem.rfind("frame_", 0) != 0 || (ext != ".ppm" && ext != ".png")) continue;
        const std::string digits = stem.substr(6);
        if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) continue;
        const int idx = std::stoi(digits);
        if (!numbered.emplace(idx, entry.path()).second)
            throw std::runtime_error("duplicate frame index " + std::to_string(idx) + " in " + dir.string());
    }
    if (numbered.empty()) throw std::runtime_error("no frame_NNNNNN.ppm/png files in " + dir.string());
    std::vector<Image> frames;
    int expected = numbered.begin()->first;
    for (const auto& [idx, path] : numbered) {
        if (idx != expected) throw std::runtime_error("missing frame " + frame_name(expected) + " in " + dir.string());
        frames.push_back(read_image(path));
        ++expected;
    }
    return frames;
}

void write_frames(const std::vector<Image>& frames, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < frames.size(); ++i) write_image(frames[i], dir / frame_name(static_cast<int>(i)));
}

}  // namespace mrstyle
