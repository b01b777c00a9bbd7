#include "fallfuse/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "fallfuse/error.hpp"

namespace fallfuse {

double magnitude(double ax, double ay, double az) {
    if (!std::isfinite(ax) || !std::isfinite(ay) || !std::isfinite(az)) {
        throw InputError("magnitude: non-finite accelerometer component");
    }
    return std::sqrt(ax * ax + ay * ay + az * az);
}

BinaryLabel binarize_label(int activity_id, const std::set<int>& fall_set,
                           std::vector<std::string>* warnings) {
    if (fall_set.empty()) throw InputError("binarize_label: empty fall set");
    if (fall_set.count(activity_id)) return BinaryLabel{1};
    // Ids above the largest known fall id and outside the usual daily-activity
    // range are likely mislabeled rows; they still classify as no-fall.
    if (warnings && activity_id > 20) {
        warnings->push_back("unknown activity id " + std::to_string(activity_id) +
                            " mapped to no-fall");
    }
    return BinaryLabel{0};
}

std::vector<double> to_grayscale(const std::uint8_t* rgb, int height, int width) {
    if (rgb == nullptr || height <= 0 || width <= 0) {
        throw DecodeError("to_grayscale: malformed RGB buffer");
    }
    std::vector<double> out(static_cast<std::size_t>(height) * width);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::uint8_t* px = rgb + i * 3;
        out[i] = (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]) / 255.0;
    }
    return out;
}

std::vector<double> resize_bilinear(const std::vector<double>& gray, int in_h, int in_w,
                                    int out_h, int out_w) {
    if (in_h < 1 || in_w < 1 || gray.size() != static_cast<std::size_t>(in_h) * in_w) {
        throw InputError("resize_bilinear: empty or inconsistent input image");
    }
    if (out_h < 1 || out_w < 1) throw InputError("resize_bilinear: empty output size");

    std::vector<double> out(static_cast<std::size_t>(out_h) * out_w);
    const double sy = static_cast<double>(in_h) / out_h;
    const double sx = static_cast<double>(in_w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(in_h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, in_h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(in_w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, in_w - 1);
            const double wx = fx - x0;
            const double top = gray[static_cast<std::size_t>(y0) * in_w + x0] * (1.0 - wx) +
                               gray[static_cast<std::size_t>(y0) * in_w + x1] * wx;
            const double bot = gray[static_cast<std::size_t>(y1) * in_w + x0] * (1.0 - wx) +
                               gray[static_cast<std::size_t>(y1) * in_w + x1] * wx;
            out[static_cast<std::size_t>(y) * out_w + x] = top * (1.0 - wy) + bot * wy;
        }
    }
    return out;
}

FrameGray make_frame(std::vector<double> pixels, int camera, std::int64_t timestamp_ms) {
    if (pixels.size() != kFramePixels) {
        throw InputError("frame must hold exactly " + std::to_string(kFramePixels) +
                         " pixels, got " + std::to_string(pixels.size()));
    }
    for (double p : pixels) {
        if (!(p >= 0.0 && p <= 1.0)) throw InputError("frame pixel outside [0,1]");
    }
    if (camera != 1 && camera != 2) throw InputError("camera must be 1 or 2");
    return FrameGray{std::move(pixels), camera, timestamp_ms};
}

Standardizer::Standardizer(std::vector<double> mean, std::vector<double> stddev)
    : mean_(std::move(mean)), stddev_(std::move(stddev)) {
    if (mean_.size() != stddev_.size() || mean_.empty()) {
        throw InputError("standardizer mean/std width mismatch");
    }
}

void Standardizer::fit(const std::vector<std::vector<double>>& rows, int width) {
    if (rows.empty() || width < 1) throw InputError("standardizer fit needs data");
    mean_.assign(static_cast<std::size_t>(width), 0.0);
    stddev_.assign(static_cast<std::size_t>(width), 0.0);
    for (const auto& row : rows) {
        if (static_cast<int>(row.size()) < width) {
            throw InputError("sensor row narrower than standardizer width");
        }
        for (int c = 0; c < width; ++c) mean_[static_cast<std::size_t>(c)] += row[static_cast<std::size_t>(c)];
    }
    const double n = static_cast<double>(rows.size());
    for (double& m : mean_) m /= n;
    for (const auto& row : rows) {
        for (int c = 0; c < width; ++c) {
            const double d = row[static_cast<std::size_t>(c)] - mean_[static_cast<std::size_t>(c)];
            stddev_[static_cast<std::size_t>(c)] += d * d;
        }
    }
    for (double& s : stddev_) {
        s = std::sqrt(s / n);
        if (s == 0.0) s = 1.0;  // constant channel
    }
}

std::vector<double> Standardizer::apply(const std::vector<double>& sensor) const {
    if (!fitted()) throw StateError("standardizer used before fit");
    if (sensor.size() < mean_.size()) {
        throw InputError("sensor vector narrower than standardizer width");
    }
    std::vector<double> out(mean_.size());
    for (std::size_t c = 0; c < mean_.size(); ++c) {
        out[c] = (sensor[c] - mean_[c]) / stddev_[c];
    }
    return out;
}

}  // namespace fallfuse
