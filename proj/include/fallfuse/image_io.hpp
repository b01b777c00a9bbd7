#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fallfuse/preprocess.hpp"

namespace fallfuse {

// Decoded 8-bit image, row-major H*W*3.
struct ImageRgb {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;
};

// Reads a PNG of any color type, expanded to 8-bit RGB. Frames in an
// UP-FALL-style corpus are PNG; JPEG inputs are rejected with a clear error.
ImageRgb read_png_rgb(const std::string& path);

void write_png_rgb(const std::string& path, const ImageRgb& image);

// Writes [0,1] grayscale values as an 8-bit gray PNG (test fixtures, debug).
void write_png_gray(const std::string& path, const std::vector<double>& gray, int height,
                    int width);

// Full frame pipeline: decode, grayscale, resize to 32x32.
FrameGray load_frame_png(const std::string& path, int camera, std::int64_t timestamp_ms);

}  // namespace fallfuse
