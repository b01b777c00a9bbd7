#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace fallfuse {

// 0 = no fall, 1 = fall.
struct BinaryLabel {
    std::uint8_t value = 0;

    bool operator==(const BinaryLabel& other) const { return value == other.value; }
};

// Euclidean magnitude of the three accelerometer axes, in g.
double magnitude(double ax, double ay, double az);

// 1 iff the activity id is one of the configured fall activities; unknown
// ids (not in fall_set, above the expected range) map to 0 with a warning.
BinaryLabel binarize_label(int activity_id, const std::set<int>& fall_set,
                           std::vector<std::string>* warnings = nullptr);

// Broadcast luma weights, scaled to [0,1]: (0.299 R + 0.587 G + 0.114 B)/255.
// rgb is row-major H*W*3 bytes.
std::vector<double> to_grayscale(const std::uint8_t* rgb, int height, int width);

// Bilinear resampling with pixel-center alignment: source coordinate of
// output pixel x is (x + 0.5) * in/out - 0.5, clamped. Output values stay
// within [min(input), max(input)]; a same-size resize is an exact copy.
std::vector<double> resize_bilinear(const std::vector<double>& gray, int in_h, int in_w,
                                    int out_h, int out_w);

inline constexpr int kFrameSide = 32;
inline constexpr int kFramePixels = kFrameSide * kFrameSide;

// One preprocessed camera frame: 32x32 grayscale, pixels in [0,1].
struct FrameGray {
    std::vector<double> pixels;  // kFramePixels, row-major
    int source_camera = 1;
    std::int64_t timestamp_ms = 0;
};

FrameGray make_frame(std::vector<double> pixels, int camera, std::int64_t timestamp_ms);

// Per-channel z-score over the training split. The statistics are frozen
// into the checkpoint so evaluation standardizes identically. Channels
// with zero spread divide by 1 instead.
class Standardizer {
public:
    Standardizer() = default;
    Standardizer(std::vector<double> mean, std::vector<double> stddev);

    // rows: one sensor vector per example; uses the first `width` entries.
    void fit(const std::vector<std::vector<double>>& rows, int width);

    std::vector<double> apply(const std::vector<double>& sensor) const;

    bool fitted() const { return !mean_.empty(); }
    int width() const { return static_cast<int>(mean_.size()); }
    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& stddev() const { return stddev_; }

private:
    std::vector<double> mean_;
    std::vector<double> stddev_;
};

}  // namespace fallfuse
