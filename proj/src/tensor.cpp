#include "fallfuse/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "fallfuse/util.hpp"

namespace fallfuse {

void Shape::validate() const {
    if (dims_.empty() || dims_.size() > 4) {
        throw ShapeError("shape rank must be 1..4, got rank " + std::to_string(dims_.size()));
    }
    for (int d : dims_) {
        if (d <= 0) throw ShapeError("shape extents must be positive, got " + str());
    }
}

std::string Shape::str() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (i) os << 'x';
        os << dims_[i];
    }
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_.elements()) {
        throw ShapeError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_.str());
    }
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor Tensor::reshaped(Shape new_shape) const {
    if (new_shape.elements() != shape_.elements()) {
        throw ShapeError("cannot reshape " + shape_.str() + " to " + new_shape.str());
    }
    return Tensor(std::move(new_shape), data_);
}

int conv_output_extent(int in, int window, int stride, int padding) {
    if (stride < 1) throw ShapeError("stride must be >= 1, got " + std::to_string(stride));
    int padded = in + 2 * padding;
    if (window > padded) {
        throw ShapeError("window " + std::to_string(window) + " exceeds padded extent " +
                         std::to_string(padded));
    }
    return (padded - window) / stride + 1;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().rank() != 2 || b.shape().rank() != 2) {
        throw ShapeError("matmul expects rank-2 tensors, got " + a.shape().str() + " and " +
                         b.shape().str());
    }
    const int m = a.shape().dim(0);
    const int k = a.shape().dim(1);
    const int n = b.shape().dim(1);
    if (b.shape().dim(0) != k) {
        throw ShapeError("matmul inner dimensions disagree: " + a.shape().str() + " vs " +
                         b.shape().str());
    }
    Tensor out(Shape{m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    parallel_for(m, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) {
            const double* arow = pa + i * k;
            double* orow = po + i * n;
            for (int kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                const double* brow = pb + static_cast<std::int64_t>(kk) * n;
                for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    });
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.shape().rank() != 2) {
        throw ShapeError("transpose expects a rank-2 tensor, got " + a.shape().str());
    }
    const int m = a.shape().dim(0);
    const int n = a.shape().dim(1);
    Tensor out(Shape{n, m});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    }
    return out;
}

Tensor conv1d(const Tensor& input, const Tensor& kernels, int stride, int padding) {
    if (input.shape().rank() != 2 || kernels.shape().rank() != 3) {
        throw ShapeError("conv1d expects input CxL and kernels FxCxk, got " +
                         input.shape().str() + " and " + kernels.shape().str());
    }
    const int c = input.shape().dim(0);
    const int len = input.shape().dim(1);
    const int f = kernels.shape().dim(0);
    const int k = kernels.shape().dim(2);
    if (kernels.shape().dim(1) != c) {
        throw ShapeError("conv1d channel mismatch: input " + input.shape().str() +
                         " vs kernels " + kernels.shape().str());
    }
    const int out_len = conv_output_extent(len, k, stride, padding);
    Tensor out(Shape{f, out_len});
    const double* pin = input.data();
    const double* pk = kernels.data();
    double* po = out.data();
    for (int fi = 0; fi < f; ++fi) {
        for (int o = 0; o < out_len; ++o) {
            const int start = o * stride - padding;
            double sum = 0.0;
            for (int ci = 0; ci < c; ++ci) {
                const double* in_row = pin + static_cast<std::int64_t>(ci) * len;
                const double* k_row = pk + (static_cast<std::int64_t>(fi) * c + ci) * k;
                const int u0 = start < 0 ? -start : 0;
                const int u1 = start + k > len ? len - start : k;
                for (int u = u0; u < u1; ++u) sum += in_row[start + u] * k_row[u];
            }
            po[static_cast<std::int64_t>(fi) * out_len + o] = sum;
        }
    }
    return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding) {
    if (input.shape().rank() != 3 || kernels.shape().rank() != 4) {
        throw ShapeError("conv2d expects input CxHxW and kernels FxCxKhxKw, got " +
                         input.shape().str() + " and " + kernels.shape().str());
    }
    const int c = input.shape().dim(0);
    const int h = input.shape().dim(1);
    const int w = input.shape().dim(2);
    const int f = kernels.shape().dim(0);
    const int kh = kernels.shape().dim(2);
    const int kw = kernels.shape().dim(3);
    if (kernels.shape().dim(1) != c) {
        throw ShapeError("conv2d channel mismatch: input " + input.shape().str() +
                         " vs kernels " + kernels.shape().str());
    }
    const int out_h = conv_output_extent(h, kh, stride, padding);
    const int out_w = conv_output_extent(w, kw, stride, padding);
    Tensor out(Shape{f, out_h, out_w});
    const double* pin = input.data();
    const double* pk = kernels.data();
    double* po = out.data();
    for (int fi = 0; fi < f; ++fi) {
        double* out_plane = po + static_cast<std::int64_t>(fi) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            const int y0 = oy * stride - padding;
            for (int ox = 0; ox < out_w; ++ox) {
                const int x0 = ox * stride - padding;
                double sum = 0.0;
                for (int ci = 0; ci < c; ++ci) {
                    const double* in_plane = pin + static_cast<std::int64_t>(ci) * h * w;
                    const double* k_plane =
                        pk + (static_cast<std::int64_t>(fi) * c + ci) * kh * kw;
                    const int v0 = y0 < 0 ? -y0 : 0;
                    const int v1 = y0 + kh > h ? h - y0 : kh;
                    for (int v = v0; v < v1; ++v) {
                        const double* in_row = in_plane + static_cast<std::int64_t>(y0 + v) * w;
                        const double* k_row = k_plane + static_cast<std::int64_t>(v) * kw;
                        const int u0 = x0 < 0 ? -x0 : 0;
                        const int u1 = x0 + kw > w ? w - x0 : kw;
                        for (int u = u0; u < u1; ++u) sum += in_row[x0 + u] * k_row[u];
                    }
                }
                out_plane[static_cast<std::int64_t>(oy) * out_w + ox] = sum;
            }
        }
    }
    return out;
}

PoolResult maxpool1d(const Tensor& input, int window, int stride) {
    if (input.shape().rank() != 2) {
        throw ShapeError("maxpool1d expects input CxL, got " + input.shape().str());
    }
    if (window < 1) throw ShapeError("pool window must be >= 1");
    const int c = input.shape().dim(0);
    const int len = input.shape().dim(1);
    if (window > len) {
        throw ShapeError("pool window " + std::to_string(window) + " exceeds input extent " +
                         std::to_string(len));
    }
    const int out_len = conv_output_extent(len, window, stride, 0);
    PoolResult res{Tensor(Shape{c, out_len}),
                   std::vector<std::int64_t>(static_cast<std::size_t>(c) * out_len)};
    const double* pin = input.data();
    for (int ci = 0; ci < c; ++ci) {
        for (int o = 0; o < out_len; ++o) {
            const std::int64_t base = static_cast<std::int64_t>(ci) * len + o * stride;
            double best = pin[base];
            std::int64_t best_idx = base;
            for (int u = 1; u < window; ++u) {
                if (pin[base + u] > best) {
                    best = pin[base + u];
                    best_idx = base + u;
                }
            }
            res.output[static_cast<std::int64_t>(ci) * out_len + o] = best;
            res.argmax[static_cast<std::size_t>(ci) * out_len + o] = best_idx;
        }
    }
    return res;
}

PoolResult maxpool2d(const Tensor& input, int window, int stride) {
    if (input.shape().rank() != 3) {
        throw ShapeError("maxpool2d expects input CxHxW, got " + input.shape().str());
    }
    if (window < 1) throw ShapeError("pool window must be >= 1");
    const int c = input.shape().dim(0);
    const int h = input.shape().dim(1);
    const int w = input.shape().dim(2);
    if (window > h || window > w) {
        throw ShapeError("pool window " + std::to_string(window) + " exceeds input extent " +
                         std::to_string(h < w ? h : w));
    }
    const int out_h = conv_output_extent(h, window, stride, 0);
    const int out_w = conv_output_extent(w, window, stride, 0);
    PoolResult res{Tensor(Shape{c, out_h, out_w}),
                   std::vector<std::int64_t>(static_cast<std::size_t>(c) * out_h * out_w)};
    const double* pin = input.data();
    for (int ci = 0; ci < c; ++ci) {
        const double* plane = pin + static_cast<std::int64_t>(ci) * h * w;
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
                const int y0 = oy * stride;
                const int x0 = ox * stride;
                double best = -std::numeric_limits<double>::infinity();
                std::int64_t best_idx = -1;
                for (int v = 0; v < window; ++v) {
                    const std::int64_t row = static_cast<std::int64_t>(y0 + v) * w + x0;
                    for (int u = 0; u < window; ++u) {
                        if (plane[row + u] > best) {
                            best = plane[row + u];
                            best_idx = static_cast<std::int64_t>(ci) * h * w + row + u;
                        }
                    }
                }
                const std::int64_t o =
                    (static_cast<std::int64_t>(ci) * out_h + oy) * out_w + ox;
                res.output[o] = best;
                res.argmax[static_cast<std::size_t>(o)] = best_idx;
            }
        }
    }
    return res;
}

PoolResult maxpool(const Tensor& input, int window, int stride, int dimensionality) {
    if (dimensionality == 1) return maxpool1d(input, window, stride);
    if (dimensionality == 2) return maxpool2d(input, window, stride);
    throw ShapeError("maxpool dimensionality must be 1 or 2, got " +
                     std::to_string(dimensionality));
}

}  // namespace fallfuse
