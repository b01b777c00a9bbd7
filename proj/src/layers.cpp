#include "fallfuse/layers.hpp"

#include <algorithm>
#include <cmath>

#include "fallfuse/error.hpp"
#include "fallfuse/util.hpp"

namespace fallfuse {

std::string layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv1D: return "conv1d";
        case LayerKind::Conv2D: return "conv2d";
        case LayerKind::MaxPool1D: return "maxpool1d";
        case LayerKind::MaxPool2D: return "maxpool2d";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::Dense: return "dense";
        case LayerKind::Dropout: return "dropout";
        case LayerKind::ReLU: return "relu";
        case LayerKind::Flatten: return "flatten";
    }
    return "unknown";
}

LayerKind layer_kind_from_name(const std::string& name) {
    if (name == "conv1d") return LayerKind::Conv1D;
    if (name == "conv2d") return LayerKind::Conv2D;
    if (name == "maxpool1d") return LayerKind::MaxPool1D;
    if (name == "maxpool2d") return LayerKind::MaxPool2D;
    if (name == "batchnorm") return LayerKind::BatchNorm;
    if (name == "dense") return LayerKind::Dense;
    if (name == "dropout") return LayerKind::Dropout;
    if (name == "relu") return LayerKind::ReLU;
    if (name == "flatten") return LayerKind::Flatten;
    throw ConfigError("unknown layer kind: " + name);
}

LayerSpec LayerSpec::conv1d(int filters, int kernel, int stride, int padding) {
    LayerSpec s;
    s.kind = LayerKind::Conv1D;
    s.filters = filters;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    s.validate();
    return s;
}

LayerSpec LayerSpec::conv2d(int filters, int kernel, int stride, int padding) {
    LayerSpec s;
    s.kind = LayerKind::Conv2D;
    s.filters = filters;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    s.validate();
    return s;
}

LayerSpec LayerSpec::maxpool1d(int window, int stride) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool1D;
    s.window = window;
    s.stride = stride == 0 ? window : stride;
    s.validate();
    return s;
}

LayerSpec LayerSpec::maxpool2d(int window, int stride) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool2D;
    s.window = window;
    s.stride = stride == 0 ? window : stride;
    s.validate();
    return s;
}

LayerSpec LayerSpec::batchnorm(double momentum, double epsilon) {
    LayerSpec s;
    s.kind = LayerKind::BatchNorm;
    s.momentum = momentum;
    s.epsilon = epsilon;
    s.validate();
    return s;
}

LayerSpec LayerSpec::dense(int units) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.units = units;
    s.validate();
    return s;
}

LayerSpec LayerSpec::dropout(double rate) {
    LayerSpec s;
    s.kind = LayerKind::Dropout;
    s.rate = rate;
    s.validate();
    return s;
}

LayerSpec LayerSpec::relu() {
    LayerSpec s;
    s.kind = LayerKind::ReLU;
    return s;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    return s;
}

void LayerSpec::validate() const {
    switch (kind) {
        case LayerKind::Conv1D:
        case LayerKind::Conv2D:
            if (filters < 1 || kernel < 1 || stride < 1 || padding < 0) {
                throw ConfigError("invalid conv spec: " + describe());
            }
            break;
        case LayerKind::MaxPool1D:
        case LayerKind::MaxPool2D:
            if (window < 1 || stride < 1) throw ConfigError("invalid pool spec: " + describe());
            break;
        case LayerKind::BatchNorm:
            if (epsilon <= 0.0 || momentum < 0.0 || momentum >= 1.0) {
                throw ConfigError("invalid batchnorm spec: " + describe());
            }
            break;
        case LayerKind::Dense:
            if (units < 1) throw ConfigError("invalid dense spec: " + describe());
            break;
        case LayerKind::Dropout:
            if (!(rate >= 0.0 && rate < 1.0)) {
                throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(rate));
            }
            break;
        case LayerKind::ReLU:
        case LayerKind::Flatten:
            break;
    }
}

std::string LayerSpec::describe() const {
    std::string s = layer_kind_name(kind);
    switch (kind) {
        case LayerKind::Conv1D:
        case LayerKind::Conv2D:
            s += "(" + std::to_string(filters) + ",k" + std::to_string(kernel) + ",s" +
                 std::to_string(stride) + ",p" + std::to_string(padding) + ")";
            break;
        case LayerKind::MaxPool1D:
        case LayerKind::MaxPool2D:
            s += "(w" + std::to_string(window) + ",s" + std::to_string(stride) + ")";
            break;
        case LayerKind::Dense:
            s += "(" + std::to_string(units) + ")";
            break;
        case LayerKind::Dropout:
            s += "(p=" + std::to_string(rate) + ")";
            break;
        default:
            break;
    }
    return s;
}

namespace {

Shape batch_shape(int n, const Shape& per_example) {
    std::vector<int> dims{n};
    for (int d : per_example.dims()) dims.push_back(d);
    return Shape(std::move(dims));
}

Shape strip_batch(const Shape& batched) {
    if (batched.rank() < 2) {
        throw ShapeError("batched tensor must have a leading batch dim, got " + batched.str());
    }
    std::vector<int> dims(batched.dims().begin() + 1, batched.dims().end());
    return Shape(std::move(dims));
}

void check_input(const Shape& got, const Shape& expected, const std::string& who) {
    if (strip_batch(got) != expected) {
        throw ShapeError(who + ": expected per-example shape " + expected.str() + ", got " +
                         got.str());
    }
}

// Kaiming-style init for layers feeding ReLU stacks.
void fill_kaiming(Tensor& w, int fan_in, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, stddev);
}

class DenseLayer final : public Layer {
public:
    using Layer::Layer;

    void init(const Shape& input_shape, Rng& rng) override {
        if (input_shape.rank() != 1) {
            throw ShapeError("dense expects flattened rank-1 input, got " + input_shape.str());
        }
        in_shape_ = input_shape;
        const int d = input_shape.dim(0);
        weight_ = Tensor(Shape{d, spec_.units});
        bias_ = Tensor(Shape{spec_.units});
        weight_grad_ = Tensor(Shape{d, spec_.units});
        bias_grad_ = Tensor(Shape{spec_.units});
        fill_kaiming(weight_, d, rng);
    }

    Shape output_shape(const Shape& input_shape) const override {
        if (input_shape.rank() != 1) {
            throw ShapeError("dense expects flattened rank-1 input, got " + input_shape.str());
        }
        return Shape{spec_.units};
    }

    Tensor forward(const Tensor& input, Mode) override {
        check_input(input.shape(), in_shape_, "dense");
        input_cache_ = input;
        cached_ = true;
        const int n = input.shape().dim(0);
        const int h = spec_.units;
        Tensor out = matmul(input, weight_);
        double* po = out.data();
        const double* pb = bias_.data();
        for (int i = 0; i < n; ++i) {
            double* row = po + static_cast<std::int64_t>(i) * h;
            for (int j = 0; j < h; ++j) row[j] += pb[j];
        }
        return out;
    }

    Tensor backward(const Tensor& grad_output) override {
        if (!cached_) throw StateError("dense backward without cached forward");
        const int n = grad_output.shape().dim(0);
        const int h = spec_.units;
        weight_grad_ = matmul(transpose(input_cache_), grad_output);
        for (std::int64_t j = 0; j < bias_grad_.size(); ++j) bias_grad_[j] = 0.0;
        const double* pg = grad_output.data();
        for (int i = 0; i < n; ++i) {
            const double* row = pg + static_cast<std::int64_t>(i) * h;
            for (int j = 0; j < h; ++j) bias_grad_[j] += row[j];
        }
        return matmul(grad_output, transpose(weight_));
    }

    std::vector<NamedTensor> parameters() override {
        return {{"weight", &weight_}, {"bias", &bias_}};
    }
    std::vector<NamedTensor> gradients() override {
        return {{"weight", &weight_grad_}, {"bias", &bias_grad_}};
    }

private:
    Shape in_shape_;
    Tensor weight_, bias_;
    Tensor weight_grad_, bias_grad_;
    Tensor input_cache_;
};

class Conv1DLayer final : public Layer {
public:
    using Layer::Layer;

    void init(const Shape& input_shape, Rng& rng) override {
        if (input_shape.rank() != 2) {
            throw ShapeError("conv1d expects CxL input, got " + input_shape.str());
        }
        in_shape_ = input_shape;
        const int c = input_shape.dim(0);
        conv_output_extent(input_shape.dim(1), spec_.kernel, spec_.stride, spec_.padding);
        kernels_ = Tensor(Shape{spec_.filters, c, spec_.kernel});
        bias_ = Tensor(Shape{spec_.filters});
        kernels_grad_ = Tensor(kernels_.shape());
        bias_grad_ = Tensor(bias_.shape());
        fill_kaiming(kernels_, c * spec_.kernel, rng);
    }

    Shape output_shape(const Shape& input_shape) const override {
        return Shape{spec_.filters, conv_output_extent(input_shape.dim(1), spec_.kernel,
                                                       spec_.stride, spec_.padding)};
    }

    Tensor forward(const Tensor& input, Mode) override {
        check_input(input.shape(), in_shape_, "conv1d");
        input_cache_ = input;
        cached_ = true;
        const int n = input.shape().dim(0);
        const Shape out_one = output_shape(in_shape_);
        Tensor out(batch_shape(n, out_one));
        const std::int64_t in_stride = in_shape_.elements();
        const std::int64_t out_stride = out_one.elements();
        const int f = spec_.filters;
        const int ol = out_one.dim(1);
        parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t i = lo; i < hi; ++i) {
                Tensor one(in_shape_,
                           std::vector<double>(input.data() + i * in_stride,
                                               input.data() + (i + 1) * in_stride));
                Tensor conv = conv1d(one, kernels_, spec_.stride, spec_.padding);
                double* dst = out.data() + i * out_stride;
                for (int fi = 0; fi < f; ++fi) {
                    const double b = bias_[fi];
                    for (int o = 0; o < ol; ++o) {
                        dst[static_cast<std::int64_t>(fi) * ol + o] =
                            conv[static_cast<std::int64_t>(fi) * ol + o] + b;
                    }
                }
            }
        });
        return out;
    }

    Tensor backward(const Tensor& grad_output) override {
        if (!cached_) throw StateError("conv1d backward without cached forward");
        const int n = grad_output.shape().dim(0);
        const int c = in_shape_.dim(0);
        const int len = in_shape_.dim(1);
        const int f = spec_.filters;
        const int k = spec_.kernel;
        const int stride = spec_.stride;
        const int padding = spec_.padding;
        const int ol = grad_output.shape().dim(2);
        const std::int64_t in_stride = in_shape_.elements();
        const std::int64_t out_stride = static_cast<std::int64_t>(f) * ol;

        Tensor grad_input(input_cache_.shape());
        double* gin = grad_input.data();
        const double* gout = grad_output.data();
        const double* pin = input_cache_.data();
        const double* pk = kernels_.data();

        // Input gradient: examples are independent.
        parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t i = lo; i < hi; ++i) {
                const double* go = gout + i * out_stride;
                double* gi = gin + i * in_stride;
                for (int fi = 0; fi < f; ++fi) {
                    for (int o = 0; o < ol; ++o) {
                        const double g = go[static_cast<std::int64_t>(fi) * ol + o];
                        if (g == 0.0) continue;
                        const int start = o * stride - padding;
                        for (int ci = 0; ci < c; ++ci) {
                            const double* krow = pk + (static_cast<std::int64_t>(fi) * c + ci) * k;
                            const int u0 = start < 0 ? -start : 0;
                            const int u1 = start + k > len ? len - start : k;
                            for (int u = u0; u < u1; ++u) {
                                gi[static_cast<std::int64_t>(ci) * len + start + u] += g * krow[u];
                            }
                        }
                    }
                }
            }
        });

        // Kernel/bias gradients: each filter slice is owned by one worker,
        // batch accumulated in index order.
        double* gk = kernels_grad_.data();
        double* gb = bias_grad_.data();
        parallel_for(f, [&](std::int64_t flo, std::int64_t fhi) {
            for (std::int64_t fi = flo; fi < fhi; ++fi) {
                double* kslice = gk + fi * c * k;
                for (int z = 0; z < c * k; ++z) kslice[z] = 0.0;
                double bsum = 0.0;
                for (std::int64_t i = 0; i < n; ++i) {
                    const double* go = gout + i * out_stride + fi * ol;
                    const double* in = pin + i * in_stride;
                    for (int o = 0; o < ol; ++o) {
                        const double g = go[o];
                        if (g == 0.0) continue;
                        bsum += g;
                        const int start = o * stride - padding;
                        for (int ci = 0; ci < c; ++ci) {
                            const int u0 = start < 0 ? -start : 0;
                            const int u1 = start + k > len ? len - start : k;
                            for (int u = u0; u < u1; ++u) {
                                kslice[static_cast<std::int64_t>(ci) * k + u] +=
                                    g * in[static_cast<std::int64_t>(ci) * len + start + u];
                            }
                        }
                    }
                }
                gb[fi] = bsum;
            }
        });
        return grad_input;
    }

    std::vector<NamedTensor> parameters() override {
        return {{"weight", &kernels_}, {"bias", &bias_}};
    }
    std::vector<NamedTensor> gradients() override {
        return {{"weight", &kernels_grad_}, {"bias", &bias_grad_}};
    }

private:
    Shape in_shape_;
    Tensor kernels_, bias_;
    Tensor kernels_grad_, bias_grad_;
    Tensor input_cache_;
};

class Conv2DLayer final : public Layer {
public:
    using Layer::Layer;

    void init(const Shape& input_shape, Rng& rng) override {
        if (input_shape.rank() != 3) {
            throw ShapeError("conv2d expects CxHxW input, got " + input_shape.str());
        }
        in_shape_ = input_shape;
        const int c = input_shape.dim(0);
        conv_output_extent(input_shape.dim(1), spec_.kernel, spec_.stride, spec_.padding);
        conv_output_extent(input_shape.dim(2), spec_.kernel, spec_.stride, spec_.padding);
        kernels_ = Tensor(Shape{spec_.filters, c, spec_.kernel, spec_.kernel});
        bias_ = Tensor(Shape{spec_.filters});
        kernels_grad_ = Tensor(kernels_.shape());
        bias_grad_ = Tensor(bias_.shape());
        fill_kaiming(kernels_, c * spec_.kernel * spec_.kernel, rng);
    }

    Shape output_shape(const Shape& input_shape) const override {
        return Shape{spec_.filters,
                     conv_output_extent(input_shape.dim(1), spec_.kernel, spec_.stride,
                                        spec_.padding),
                     conv_output_extent(input_shape.dim(2), spec_.kernel, spec_.stride,
                                        spec_.padding)};
    }

    Tensor forward(const Tensor& input, Mode) override {
        check_input(input.shape(), in_shape_, "conv2d");
        input_cache_ = input;
        cached_ = true;
        const int n = input.shape().dim(0);
        const Shape out_one = output_shape(in_shape_);
        Tensor out(batch_shape(n, out_one));
        const std::int64_t in_stride = in_shape_.elements();
        const std::int64_t out_stride = out_one.elements();
        const int f = spec_.filters;
        const std::int64_t plane = static_cast<std::int64_t>(out_one.dim(1)) * out_one.dim(2);
        parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t i = lo; i < hi; ++i) {
                Tensor one(in_shape_,
                           std::vector<double>(input.data() + i * in_stride,
                                               input.data() + (i + 1) * in_stride));
                Tensor conv = conv2d(one, kernels_, spec_.stride, spec_.padding);
                double* dst = out.data() + i * out_stride;
                for (int fi = 0; fi < f; ++fi) {
                    const double b = bias_[fi];
                    const double* src = conv.data() + static_cast<std::int64_t>(fi) * plane;
                    double* d = dst + static_cast<std::int64_t>(fi) * plane;
                    for (std::int64_t z = 0; z < plane; ++z) d[z] = src[z] + b;
                }
            }
        });
        return out;
    }

    Tensor backward(const Tensor& grad_output) override {
        if (!cached_) throw StateError("conv2d backward without cached forward");
        const int n = grad_output.shape().dim(0);
        const int c = in_shape_.dim(0);
        const int h = in_shape_.dim(1);
        const int w = in_shape_.dim(2);
        const int f = spec_.filters;
        const int k = spec_.kernel;
        const int stride = spec_.stride;
        const int padding = spec_.padding;
        const int oh = grad_output.shape().dim(2);
        const int ow = grad_output.shape().dim(3);
        const std::int64_t in_stride = in_shape_.elements();
        const std::int64_t out_stride = static_cast<std::int64_t>(f) * oh * ow;

        Tensor grad_input(input_cache_.shape());
        double* gin = grad_input.data();
        const double* gout = grad_output.data();
        const double* pin = input_cache_.data();
        const double* pk = kernels_.data();

        parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t i = lo; i < hi; ++i) {
                const double* go = gout + i * out_stride;
                double* gi = gin + i * in_stride;
                for (int fi = 0; fi < f; ++fi) {
                    const double* kbase = pk + static_cast<std::int64_t>(fi) * c * k * k;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int y0 = oy * stride - padding;
                        for (int ox = 0; ox < ow; ++ox) {
                            const double g =
                                go[(static_cast<std::int64_t>(fi) * oh + oy) * ow + ox];
                            if (g == 0.0) continue;
                            const int x0 = ox * stride - padding;
                            for (int ci = 0; ci < c; ++ci) {
                                const double* kp = kbase + static_cast<std::int64_t>(ci) * k * k;
                                double* gplane = gi + static_cast<std::int64_t>(ci) * h * w;
                                const int v0 = y0 < 0 ? -y0 : 0;
                                const int v1 = y0 + k > h ? h - y0 : k;
                                for (int v = v0; v < v1; ++v) {
                                    const int u0 = x0 < 0 ? -x0 : 0;
                                    const int u1 = x0 + k > w ? w - x0 : k;
                                    double* grow = gplane + static_cast<std::int64_t>(y0 + v) * w;
                                    const double* krow = kp + static_cast<std::int64_t>(v) * k;
                                    for (int u = u0; u < u1; ++u) {
                                        grow[x0 + u] += g * krow[u];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });

        double* gk = kernels_grad_.data();
        double* gb = bias_grad_.data();
        parallel_for(f, [&](std::int64_t flo, std::int64_t fhi) {
            for (std::int64_t fi = flo; fi < fhi; ++fi) {
                double* kslice = gk + fi * c * k * k;
                for (int z = 0; z < c * k * k; ++z) kslice[z] = 0.0;
                double bsum = 0.0;
                for (std::int64_t i = 0; i < n; ++i) {
                    const double* go = gout + i * out_stride + fi * oh * ow;
                    const double* in = pin + i * in_stride;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int y0 = oy * stride - padding;
                        for (int ox = 0; ox < ow; ++ox) {
                            const double g = go[static_cast<std::int64_t>(oy) * ow + ox];
                            if (g == 0.0) continue;
                            bsum += g;
                            const int x0 = ox * stride - padding;
                            for (int ci = 0; ci < c; ++ci) {
                                const double* iplane = in + static_cast<std::int64_t>(ci) * h * w;
                                double* kp = kslice + static_cast<std::int64_t>(ci) * k * k;
                                const int v0 = y0 < 0 ? -y0 : 0;
                                const int v1 = y0 + k > h ? h - y0 : k;
                                for (int v = v0; v < v1; ++v) {
                                    const double* irow =
                                        iplane + static_cast<std::int64_t>(y0 + v) * w;
                                    double* krow = kp + static_cast<std::int64_t>(v) * k;
                                    const int u0 = x0 < 0 ? -x0 : 0;
                                    const int u1 = x0 + k > w ? w - x0 : k;
                                    for (int u = u0; u < u1; ++u) {
                                        krow[u] += g * irow[x0 + u];
                                    }
                                }
                            }
                        }
                    }
                }
                gb[fi] = bsum;
            }
        });
        return grad_input;
    }

    std::vector<NamedTensor> parameters() override {
        return {{"weight", &kernels_}, {"bias", &bias_}};
    }
    std::vector<NamedTensor> gradients() override {
        return {{"weight", &kernels_grad_}, {"bias", &bias_grad_}};
    }

private:
    Shape in_shape_;
    Tensor kernels_, bias_;
    Tensor kernels_grad_, bias_grad_;
    Tensor input_cache_;
};

template <int Dims>
class MaxPoolLayer final : public Layer {
public:
    using Layer::Layer;

    void init(const Shape& input_shape, Rng&) override {
        if (input_shape.rank() != Dims + 1) {
            throw ShapeError(layer_kind_name(spec_.kind) + " expects rank-" +
                             std::to_string(Dims + 1) + " input, got " + input_shape.str());
        }
        output_shape(input_shape);  // validates window vs extent
        in_shape_ = input_shape;
    }

    Shape output_shape(const Shape& input_shape) const override {
        if constexpr (Dims == 1) {
            if (spec_.window > input_shape.dim(1)) {
                throw ShapeError("pool window exceeds input extent " + input_shape.str());
            }
            return Shape{input_shape.dim(0),
                         conv_output_extent(input_shape.dim(1), spec_.window, spec_.stride, 0)};
        } else {
            if (spec_.window > input_shape.dim(1) || spec_.window > input_shape.dim(2)) {
                throw ShapeError("pool window exceeds input extent " + input_shape.str());
            }
            return Shape{input_shape.dim(0),
                         conv_output_extent(input_shape.dim(1), spec_.window, spec_.stride, 0),
                         conv_output_extent(input_shape.dim(2), spec_.window, spec_.stride, 0)};
        }
    }

    Tensor forward(const Tensor& input, Mode) override {
        check_input(input.shape(), in_shape_, layer_kind_name(spec_.kind));
        const int n = input.shape().dim(0);
        const Shape out_one = output_shape(in_shape_);
        const std::int64_t in_stride = in_shape_.elements();
        const std::int64_t out_stride = out_one.elements();
        Tensor out(batch_shape(n, out_one));
        argmax_.assign(static_cast<std::size_t>(n) * out_stride, 0);
        parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t i = lo; i < hi; ++i) {
                Tensor one(in_shape_,
                           std::vector<double>(input.data() + i * in_stride,
                                               input.data() + (i + 1) * in_stride));
                PoolResult r = maxpool(one, spec_.window, spec_.stride, Dims);
                std::copy(r.output.data(), r.output.data() + out_stride,
                          out.data() + i * out_stride);
                std::copy(r.argmax.begin(), r.argmax.end(),
                          argmax_.begin() + static_cast<std::size_t>(i * out_stride));
            }
        });
        cached_ = true;
        return out;
    }

    Tensor backward(const Tensor& grad_output) override {
        if (!cached_) throw StateError("maxpool backward without cached forward");
        const int n = grad_output.shape().dim(0);
        const std::int64_t in_stride = in_shape_.elements();
        const std::int64_t out_stride = grad_output.size() / n;
        Tensor grad_input(batch_shape(n, in_shape_));
        const double* go = grad_output.data();
        double* gi = grad_input.data();
        // Gradient flows only to the recorded argmax winners; windows can
        // overlap under stride < window, hence +=.
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t o = 0; o < out_stride; ++o) {
                gi[i * in_stride + argmax_[static_cast<std::size_t>(i * out_stride + o)]] +=
                    go[i * out_stride + o];
            }
        }
        return grad_input;
    }

private:
    Shape in_shape_;
    std::vector<std::int64_t> argmax_;
};

class BatchNormLayer final : public Layer {
public:
    using Layer::Layer;

    void init(const Shape& input_shape, Rng&) override {
        in_shape_ = input_shape;
        channels_ = input_shape.dim(0);
        gamma_ = Tensor(Shape{channels_}, 1.0);
        beta_ = Tensor(Shape{channels_}, 0.0);
        gamma_grad_ = Tensor(Shape{channels_});
        beta_grad_ = Tensor(Shape{channels_});
        // Fresh running stats normalize by mean 0 / var 1, so an Eval
        // forward before any Train step is defined, not an error.
        running_mean_ = Tensor(Shape{channels_}, 0.0);
        running_var_ = Tensor(Shape{channels_}, 1.0);
    }

    Shape output_shape(const Shape& input_shape) const override { return input_shape; }

    Tensor forward(const Tensor& input, Mode mode) override {
        check_input(input.shape(), in_shape_, "batchnorm");
        const int n = input.shape().dim(0);
        const std::int64_t per_example = in_shape_.elements();
        const std::int64_t spatial = per_example / channels_;
        const std::int64_t m = static_cast<std::int64_t>(n) * spatial;
        Tensor out(input.shape());

        if (mode == Mode::Eval) {
            // Deterministic affine map from the running statistics.
            for (int c = 0; c < channels_; ++c) {
                const double inv = 1.0 / std::sqrt(running_var_[c] + spec_.epsilon);
                const double scale = gamma_[c] * inv;
                const double shift = beta_[c] - running_mean_[c] * scale;
                for (std::int64_t i = 0; i < n; ++i) {
                    const double* src = input.data() + i * per_example + c * spatial;
                    double* dst = out.data() + i * per_example + c * spatial;
                    for (std::int64_t s = 0; s < spatial; ++s) dst[s] = src[s] * scale + shift;
                }
            }
            cached_ = false;
            return out;
        }

        xhat_ = Tensor(input.shape());
        inv_std_.assign(static_cast<std::size_t>(channels_), 0.0);
        batch_n_ = m;
        for (int c = 0; c < channels_; ++c) {
            double mean = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const double* src = input.data() + i * per_example + c * spatial;
                for (std::int64_t s = 0; s < spatial; ++s) mean += src[s];
            }
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const double* src = input.data() + i * per_example + c * spatial;
                for (std::int64_t s = 0; s < spatial; ++s) {
                    const double d = src[s] - mean;
                    var += d * d;
                }
            }
            var /= static_cast<double>(m);
            const double inv = 1.0 / std::sqrt(var + spec_.epsilon);
            inv_std_[static_cast<std::size_t>(c)] = inv;
            for (std::int64_t i = 0; i < n; ++i) {
                const double* src = input.data() + i * per_example + c * spatial;
                double* xh = xhat_.data() + i * per_example + c * spatial;
                double* dst = out.data() + i * per_example + c * spatial;
                for (std::int64_t s = 0; s < spatial; ++s) {
                    xh[s] = (src[s] - mean) * inv;
                    dst[s] = gamma_[c] * xh[s] + beta_[c];
                }
            }
            running_mean_[c] = spec_.momentum * running_mean_[c] + (1.0 - spec_.momentum) * mean;
            running_var_[c] = spec_.momentum * running_var_[c] + (1.0 - spec_.momentum) * var;
        }
        cached_ = true;
        return out;
    }

    Tensor backward(const Tensor& grad_output) override {
        if (!cached_) throw StateError("batchnorm backward without cached training forward");
        const int n = grad_output.shape().dim(0);
        const std::int64_t per_example = in_shape_.elements();
        const std::int64_t spatial = per_example / channels_;
        const double m = static_cast<double>(batch_n_);
        Tensor grad_input(grad_output.shape());
        for (int c = 0; c < channels_; ++c) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const double* go = grad_output.data() + i * per_example + c * spatial;
                const double* xh = xhat_.data() + i * per_example + c * spatial;
                for (std::int64_t s = 0; s < spatial; ++s) {
                    sum_g += go[s];
                    sum_gx += go[s] * xh[s];
                }
            }
            gamma_grad_[c] = sum_gx;
            beta_grad_[c] = sum_g;
            const double scale = gamma_[c] * inv_std_[static_cast<std::size_t>(c)] / m;
            for (std::int64_t i = 0; i < n; ++i) {
                const double* go = grad_output.data() + i * per_example + c * spatial;
                const double* xh = xhat_.data() + i * per_example + c * spatial;
                double* gi = grad_input.data() + i * per_example + c * spatial;
                for (std::int64_t s = 0; s < spatial; ++s) {
                    gi[s] = scale * (m * go[s] - sum_g - xh[s] * sum_gx);
                }
            }
        }
        return grad_input;
    }

    std::vector<NamedTensor> parameters() override {
        return {{"gamma", &gamma_}, {"beta", &beta_}};
    }
    std::vector<NamedTensor> gradients() override {
        return {{"gamma", &gamma_grad_}, {"beta", &beta_grad_}};
    }
    std::vector<NamedTensor> buffers() override {
        return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
    }

private:
    Shape in_shape_;
    int channels_ = 0;
    Tensor gamma_, beta_;
    Tensor gamma_grad_, beta_grad_;
    Tensor running_mean_, running_var_;
    Tensor xhat_;
    std::vector<double> inv_std_;
    std::int64_t batch_n_ = 0;
};

class ReLULayer final : public Layer {
public:
    using Layer::Layer;

    void init(const Shape& input_shape, Rng&) override { in_shape_ = input_shape; }
    Shape output_shape(const Shape& input_shape) const override { return input_shape; }

    Tensor forward(const Tensor& input, Mode) override {
        check_input(input.shape(), in_shape_, "relu");
        input_cache_ = input;
        cached_ = true;
        Tensor out(input.shape());
        for (std::int64_t i = 0; i < input.size(); ++i) {
            out[i] = input[i] > 0.0 ? input[i] : 0.0;
        }
        return out;
    }

    Tensor backward(const Tensor& grad_output) override {
        if (!cached_) throw StateError("relu backward without cached forward");
        Tensor grad_input(grad_output.shape());
        // Subgradient at exactly zero is taken as 0.
        for (std::int64_t i = 0; i < grad_output.size(); ++i) {
            grad_input[i] = input_cache_[i] > 0.0 ? grad_output[i] : 0.0;
        }
        return grad_input;
    }

private:
    Shape in_shape_;
    Tensor input_cache_;
};

class FlattenLayer final : public Layer {
public:
    using Layer::Layer;

    void init(const Shape& input_shape, Rng&) override { in_shape_ = input_shape; }

    Shape output_shape(const Shape& input_shape) const override {
        return Shape{static_cast<int>(input_shape.elements())};
    }

    Tensor forward(const Tensor& input, Mode) override {
        check_input(input.shape(), in_shape_, "flatten");
        cached_ = true;
        const int n = input.shape().dim(0);
        return input.reshaped(Shape{n, static_cast<int>(in_shape_.elements())});
    }

    Tensor backward(const Tensor& grad_output) override {
        if (!cached_) throw StateError("flatten backward without cached forward");
        const int n = grad_output.shape().dim(0);
        return grad_output.reshaped(batch_shape(n, in_shape_));
    }

private:
    Shape in_shape_;
};

}  // namespace

// Inverted dropout: survivors are scaled by 1/(1-p) at train time so Eval
// mode is the identity. Exposed in the header-adjacent TU for grad_check's
// mask freezing.
class DropoutLayer final : public Layer {
public:
    using Layer::Layer;

    void init(const Shape& input_shape, Rng&) override { in_shape_ = input_shape; }
    Shape output_shape(const Shape& input_shape) const override { return input_shape; }
    void attach_rng(Rng* rng) override { rng_ = rng; }

    void set_mask_frozen(bool frozen) { frozen_ = frozen; }

    Tensor forward(const Tensor& input, Mode mode) override {
        check_input(input.shape(), in_shape_, "dropout");
        if (mode == Mode::Eval || spec_.rate == 0.0) {
            cached_ = false;
            return input;
        }
        if (!frozen_ || mask_.size() != input.size()) {
            if (rng_ == nullptr) throw StateError("dropout has no attached rng");
            mask_ = Tensor(input.shape());
            const double keep = 1.0 - spec_.rate;
            for (std::int64_t i = 0; i < mask_.size(); ++i) {
                mask_[i] = rng_->uniform() < spec_.rate ? 0.0 : 1.0 / keep;
            }
        }
        Tensor out(input.shape());
        for (std::int64_t i = 0; i < input.size(); ++i) out[i] = input[i] * mask_[i];
        cached_ = true;
        return out;
    }

    Tensor backward(const Tensor& grad_output) override {
        if (!cached_) throw StateError("dropout backward without cached training forward");
        Tensor grad_input(grad_output.shape());
        for (std::int64_t i = 0; i < grad_output.size(); ++i) {
            grad_input[i] = grad_output[i] * mask_[i];
        }
        return grad_input;
    }

private:
    Shape in_shape_;
    Rng* rng_ = nullptr;
    Tensor mask_;
    bool frozen_ = false;
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case LayerKind::Conv1D: return std::make_unique<Conv1DLayer>(spec);
        case LayerKind::Conv2D: return std::make_unique<Conv2DLayer>(spec);
        case LayerKind::MaxPool1D: return std::make_unique<MaxPoolLayer<1>>(spec);
        case LayerKind::MaxPool2D: return std::make_unique<MaxPoolLayer<2>>(spec);
        case LayerKind::BatchNorm: return std::make_unique<BatchNormLayer>(spec);
        case LayerKind::Dense: return std::make_unique<DenseLayer>(spec);
        case LayerKind::Dropout: return std::make_unique<DropoutLayer>(spec);
        case LayerKind::ReLU: return std::make_unique<ReLULayer>(spec);
        case LayerKind::Flatten: return std::make_unique<FlattenLayer>(spec);
    }
    throw ConfigError("unhandled layer kind");
}

Tensor softmax(const Tensor& logits) {
    if (logits.shape().rank() != 2) {
        throw ShapeError("softmax expects batch x classes, got " + logits.shape().str());
    }
    const int n = logits.shape().dim(0);
    const int k = logits.shape().dim(1);
    Tensor out(logits.shape());
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data() + static_cast<std::int64_t>(i) * k;
        double* orow = out.data() + static_cast<std::int64_t>(i) * k;
        double mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < k; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int j = 0; j < k; ++j) orow[j] /= sum;
    }
    return out;
}

CrossEntropyResult cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.shape().rank() != 2) {
        throw ShapeError("cross_entropy expects batch x classes, got " + probs.shape().str());
    }
    const int n = probs.shape().dim(0);
    const int k = probs.shape().dim(1);
    if (static_cast<int>(labels.size()) != n) {
        throw InputError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    }
    CrossEntropyResult res;
    res.grad_logits = Tensor(probs.shape());
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const int label = labels[static_cast<std::size_t>(i)];
        if (label < 0 || label >= k) {
            throw InputError("cross_entropy: label " + std::to_string(label) +
                             " outside [0," + std::to_string(k) + ")");
        }
        const double* row = probs.data() + static_cast<std::int64_t>(i) * k;
        double* grow = res.grad_logits.data() + static_cast<std::int64_t>(i) * k;
        loss -= std::log(std::max(row[label], 1e-12));
        for (int j = 0; j < k; ++j) {
            grow[j] = (row[j] - (j == label ? 1.0 : 0.0)) / static_cast<double>(n);
        }
    }
    res.loss = loss / static_cast<double>(n);
    return res;
}

void OptimizerConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("learning rate must be > 0, got " + std::to_string(lr));
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
    if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0) {
        throw ConfigError("adam betas must be in (0,1)");
    }
    if (epsilon <= 0.0) throw ConfigError("optimizer epsilon must be > 0");
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

void Optimizer::step(const std::vector<NamedTensor>& params,
                     const std::vector<NamedTensor>& grads) {
    if (params.size() != grads.size()) {
        throw InputError("optimizer step: parameter/gradient count mismatch");
    }
    ++t_;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& param = *params[p].tensor;
        const Tensor& grad = *grads[p].tensor;
        if (param.shape() != grad.shape()) {
            throw ShapeError("optimizer step: " + params[p].name + " parameter " +
                             param.shape().str() + " vs gradient " + grad.shape().str());
        }
        if (config_.algorithm == OptimizerConfig::Algorithm::SGD) {
            auto [it, fresh] = velocity_.try_emplace(params[p].name, Tensor(param.shape()));
            Tensor& vel = it->second;
            for (std::int64_t i = 0; i < param.size(); ++i) {
                vel[i] = config_.momentum * vel[i] + grad[i];
                param[i] -= config_.lr * vel[i];
            }
        } else {
            auto [mit, f1] = m_.try_emplace(params[p].name, Tensor(param.shape()));
            auto [vit, f2] = v_.try_emplace(params[p].name, Tensor(param.shape()));
            Tensor& m = mit->second;
            Tensor& v = vit->second;
            const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
            const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
            for (std::int64_t i = 0; i < param.size(); ++i) {
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                param[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.epsilon);
            }
        }
    }
}

namespace {

double weighted_sum(const Tensor& out, const std::vector<double>& weights) {
    double s = 0.0;
    for (std::int64_t i = 0; i < out.size(); ++i) {
        s += out[i] * weights[static_cast<std::size_t>(i)];
    }
    return s;
}

}  // namespace

double grad_check(Layer& layer, const Tensor& input, double eps, std::uint64_t seed) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) {
        throw InputError("grad_check eps must be in [1e-7, 1e-3]");
    }
    Rng dropout_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    layer.attach_rng(&dropout_rng);

    Tensor x = input;
    Tensor probe = layer.forward(x, Mode::Train);
    if (auto* dropout = dynamic_cast<DropoutLayer*>(&layer)) {
        dropout->set_mask_frozen(true);  // identical mask on every re-evaluation
    }

    Rng wrng(seed);
    std::vector<double> weights(static_cast<std::size_t>(probe.size()));
    for (double& w : weights) w = wrng.uniform(0.5, 1.5);

    // Analytical pass.
    Tensor grad_out(probe.shape(), weights);
    layer.forward(x, Mode::Train);
    Tensor analytic_input = layer.backward(grad_out);
    std::vector<Tensor> analytic_params;
    for (const NamedTensor& g : layer.gradients()) analytic_params.push_back(*g.tensor);

    const auto loss_at = [&]() { return weighted_sum(layer.forward(x, Mode::Train), weights); };

    double worst = 0.0;
    const auto compare = [&](double analytic, double numeric) {
        const double diff = std::abs(analytic - numeric);
        if (diff <= 1e-10) return;
        const double denom = std::max(std::abs(analytic), std::abs(numeric));
        worst = std::max(worst, diff / denom);
    };

    auto params = layer.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p].tensor;
        for (std::int64_t i = 0; i < t.size(); ++i) {
            const double orig = t[i];
            t[i] = orig + eps;
            const double up = loss_at();
            t[i] = orig - eps;
            const double down = loss_at();
            t[i] = orig;
            compare(analytic_params[p][i], (up - down) / (2.0 * eps));
        }
    }
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + eps;
        const double up = loss_at();
        x[i] = orig - eps;
        const double down = loss_at();
        x[i] = orig;
        compare(analytic_input[i], (up - down) / (2.0 * eps));
    }
    if (auto* dropout = dynamic_cast<DropoutLayer*>(&layer)) {
        dropout->set_mask_frozen(false);
    }
    return worst;
}

}  // namespace fallfuse
