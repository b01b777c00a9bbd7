#include "fallfuse/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "fallfuse/error.hpp"
#include "fallfuse/metrics.hpp"

namespace fallfuse {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Fusion: return "Fusion";
        case Variant::SensorMLP: return "SensorMLP";
        case Variant::Sensor1DCNN: return "Sensor1DCNN";
        case Variant::Camera1: return "Camera1";
        case Variant::Camera2: return "Camera2";
        case Variant::Camera1And2: return "Camera1And2";
        case Variant::MultiSensorFusion: return "MultiSensorFusion";
    }
    return "unknown";
}

Variant variant_from_name(const std::string& name) {
    for (Variant v : {Variant::Fusion, Variant::SensorMLP, Variant::Sensor1DCNN,
                      Variant::Camera1, Variant::Camera2, Variant::Camera1And2,
                      Variant::MultiSensorFusion}) {
        if (variant_name(v) == name) return v;
    }
    throw ConfigError("unknown model variant: " + name);
}

bool ModelSpec::uses_sensor() const {
    return variant == Variant::Fusion || variant == Variant::SensorMLP ||
           variant == Variant::Sensor1DCNN || variant == Variant::MultiSensorFusion;
}

bool ModelSpec::uses_cam1() const {
    return variant == Variant::Fusion || variant == Variant::Camera1 ||
           variant == Variant::Camera1And2 || variant == Variant::MultiSensorFusion;
}

bool ModelSpec::uses_cam2() const {
    return variant == Variant::Fusion || variant == Variant::Camera2 ||
           variant == Variant::Camera1And2 || variant == Variant::MultiSensorFusion;
}

namespace {

std::vector<LayerSpec> sensor_conv_branch(const ModelProfile& p) {
    return {LayerSpec::conv1d(p.sensor_filters, 3, 1, 1), LayerSpec::maxpool1d(2),
            LayerSpec::batchnorm(), LayerSpec::flatten()};
}

std::vector<LayerSpec> camera_branch(const ModelProfile& p) {
    return {LayerSpec::conv2d(p.cam_filters1, 3, 1, 1), LayerSpec::maxpool2d(2),
            LayerSpec::batchnorm(), LayerSpec::conv2d(p.cam_filters2, 3, 1, 1),
            LayerSpec::maxpool2d(2), LayerSpec::batchnorm(), LayerSpec::flatten()};
}

std::vector<LayerSpec> mlp_head(const ModelProfile& p) {
    // Two hidden fully-connected layers with dropout, then the final
    // projection to the two-way embedding consumed by softmax.
    return {LayerSpec::dense(p.head_width1), LayerSpec::relu(), LayerSpec::dropout(p.dropout),
            LayerSpec::dense(p.head_width2), LayerSpec::relu(), LayerSpec::dense(2)};
}

}  // namespace

ModelSpec ModelSpec::make(Variant variant, const ModelProfile& profile, int sensor_width) {
    ModelSpec spec;
    spec.variant = variant;
    spec.sensor_width = sensor_width;
    spec.head = mlp_head(profile);
    switch (variant) {
        case Variant::Fusion:
        case Variant::MultiSensorFusion:
            spec.sensor_branch = sensor_conv_branch(profile);
            spec.cam1_branch = camera_branch(profile);
            spec.cam2_branch = camera_branch(profile);
            break;
        case Variant::SensorMLP:
            spec.sensor_branch = {LayerSpec::flatten(), LayerSpec::dense(profile.mlp_hidden),
                                  LayerSpec::relu()};
            break;
        case Variant::Sensor1DCNN:
            spec.sensor_branch = sensor_conv_branch(profile);
            break;
        case Variant::Camera1:
            spec.cam1_branch = camera_branch(profile);
            break;
        case Variant::Camera2:
            spec.cam2_branch = camera_branch(profile);
            break;
        case Variant::Camera1And2:
            spec.cam1_branch = camera_branch(profile);
            spec.cam2_branch = camera_branch(profile);
            break;
    }
    spec.validate();
    return spec;
}

void ModelSpec::validate() const {
    if (sensor_width < 1 || sensor_length < 1) {
        throw ConfigError("sensor width and length must be positive");
    }
    if (uses_sensor() && sensor_branch.empty()) {
        throw ConfigError(variant_name(variant) + " requires a sensor branch");
    }
    if (uses_cam1() != !cam1_branch.empty() || uses_cam2() != !cam2_branch.empty()) {
        throw ConfigError(variant_name(variant) + " has inconsistent camera branches");
    }
    if ((variant == Variant::Fusion || variant == Variant::MultiSensorFusion) &&
        (sensor_branch.empty() || cam1_branch.empty() || cam2_branch.empty())) {
        throw ConfigError("fusion variants need all three branches");
    }
    if (head.empty() || head.back().kind != LayerKind::Dense || head.back().units != 2) {
        throw ConfigError("head must end in a dense layer of width 2");
    }
    for (const auto& stacks : {&sensor_branch, &cam1_branch, &cam2_branch, &head}) {
        for (const LayerSpec& s : *stacks) s.validate();
    }
}

Model::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)), rng_(seed) {}

Model Model::build(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model model(spec, seed);

    struct BranchDef {
        const std::vector<LayerSpec>* specs;
        std::vector<std::unique_ptr<Layer>>* layers;
        Shape input;
        const char* name;
        bool active;
    };
    const Shape sensor_shape{spec.sensor_width, spec.sensor_length};
    const Shape cam_shape{1, kFrameSide, kFrameSide};
    BranchDef defs[3] = {
        {&spec.sensor_branch, &model.sensor_, sensor_shape, "sensor", spec.uses_sensor()},
        {&spec.cam1_branch, &model.cam1_, cam_shape, "cam1", spec.uses_cam1()},
        {&spec.cam2_branch, &model.cam2_, cam_shape, "cam2", spec.uses_cam2()},
    };

    int concat_width = 0;
    for (BranchDef& def : defs) {
        if (!def.active) continue;
        Shape shape = def.input;
        for (std::size_t i = 0; i < def.specs->size(); ++i) {
            auto layer = make_layer((*def.specs)[i]);
            try {
                layer->init(shape, model.rng_);
                shape = layer->output_shape(shape);
            } catch (const ShapeError& e) {
                throw ShapeError(std::string(def.name) + " branch layer " + std::to_string(i) +
                                 " (" + (*def.specs)[i].describe() + "): " + e.what());
            }
            layer->attach_rng(&model.rng_);
            def.layers->push_back(std::move(layer));
        }
        if (shape.rank() != 1) {
            throw ShapeError(std::string(def.name) +
                             " branch must end flattened, got shape " + shape.str());
        }
        model.branch_widths_.push_back(shape.dim(0));
        concat_width += shape.dim(0);
    }

    Shape shape{concat_width};
    for (std::size_t i = 0; i < spec.head.size(); ++i) {
        auto layer = make_layer(spec.head[i]);
        try {
            layer->init(shape, model.rng_);
            shape = layer->output_shape(shape);
        } catch (const ShapeError& e) {
            throw ShapeError("head layer " + std::to_string(i) + " (" +
                             spec.head[i].describe() + "): " + e.what());
        }
        layer->attach_rng(&model.rng_);
        model.head_.push_back(std::move(layer));
    }
    return model;
}

ModalityBatch Model::make_batch(std::span<const FusedExample> examples) const {
    if (examples.empty()) throw InputError("make_batch: empty batch");
    const int n = static_cast<int>(examples.size());
    ModalityBatch batch;
    batch.batch = n;
    batch.has_sensor = spec_.uses_sensor();
    batch.has_cam1 = spec_.uses_cam1();
    batch.has_cam2 = spec_.uses_cam2();

    if (batch.has_sensor) {
        const int c = spec_.sensor_width;
        const int len = spec_.sensor_length;
        batch.sensor = Tensor(Shape{n, c, len});
        for (int i = 0; i < n; ++i) {
            const FusedExample& ex = examples[static_cast<std::size_t>(i)];
            if (static_cast<int>(ex.sensor.size()) < c) {
                throw ModalityError("example sensor width " + std::to_string(ex.sensor.size()) +
                                    " narrower than model width " + std::to_string(c));
            }
            std::vector<double> values = standardizer_.fitted()
                                             ? standardizer_.apply(ex.sensor)
                                             : std::vector<double>(ex.sensor.begin(),
                                                                   ex.sensor.begin() + c);
            for (int ch = 0; ch < c; ++ch) {
                for (int l = 0; l < len; ++l) {
                    batch.sensor.at(i, ch, l) = values[static_cast<std::size_t>(ch)];
                }
            }
        }
    }
    const auto fill_cam = [n](Tensor& dst, auto pixels_of) {
        dst = Tensor(Shape{n, 1, kFrameSide, kFrameSide});
        for (int i = 0; i < n; ++i) {
            const std::vector<double>& px = pixels_of(i);
            if (px.size() != kFramePixels) {
                throw ModalityError("example frame missing or malformed");
            }
            std::copy(px.begin(), px.end(),
                      dst.data() + static_cast<std::int64_t>(i) * kFramePixels);
        }
    };
    if (batch.has_cam1) {
        fill_cam(batch.cam1,
                 [&](int i) -> const std::vector<double>& { return examples[static_cast<std::size_t>(i)].cam1.pixels; });
    }
    if (batch.has_cam2) {
        fill_cam(batch.cam2,
                 [&](int i) -> const std::vector<double>& { return examples[static_cast<std::size_t>(i)].cam2.pixels; });
    }
    return batch;
}

namespace {

Tensor run_stack(std::vector<std::unique_ptr<Layer>>& layers, Tensor x, Mode mode) {
    for (auto& layer : layers) x = layer->forward(x, mode);
    return x;
}

Tensor run_stack_backward(std::vector<std::unique_ptr<Layer>>& layers, Tensor grad) {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) grad = (*it)->backward(grad);
    return grad;
}

}  // namespace

Tensor Model::forward_logits(const ModalityBatch& input, Mode mode) {
    if (input.batch < 1) throw InputError("forward: empty batch");
    std::vector<Tensor> embeddings;
    if (spec_.uses_sensor()) {
        if (!input.has_sensor) throw ModalityError("model requires the sensor modality");
        embeddings.push_back(run_stack(sensor_, input.sensor, mode));
    }
    if (spec_.uses_cam1()) {
        if (!input.has_cam1) throw ModalityError("model requires camera 1 frames");
        embeddings.push_back(run_stack(cam1_, input.cam1, mode));
    }
    if (spec_.uses_cam2()) {
        if (!input.has_cam2) throw ModalityError("model requires camera 2 frames");
        embeddings.push_back(run_stack(cam2_, input.cam2, mode));
    }

    // Concatenate the flattened per-modality embeddings.
    const int n = input.batch;
    int width = 0;
    for (const Tensor& e : embeddings) width += e.shape().dim(1);
    Tensor concat(Shape{n, width});
    int offset = 0;
    for (const Tensor& e : embeddings) {
        const int w = e.shape().dim(1);
        for (int i = 0; i < n; ++i) {
            std::copy(e.data() + static_cast<std::int64_t>(i) * w,
                      e.data() + static_cast<std::int64_t>(i + 1) * w,
                      concat.data() + static_cast<std::int64_t>(i) * width + offset);
        }
        offset += w;
    }
    return run_stack(head_, std::move(concat), mode);
}

Tensor Model::forward(const ModalityBatch& input, Mode mode) {
    return softmax(forward_logits(input, mode));
}

void Model::backward_logits(const Tensor& grad_logits) {
    Tensor grad = run_stack_backward(head_, grad_logits);

    const int n = grad.shape().dim(0);
    const int width = grad.shape().dim(1);
    std::vector<std::vector<std::unique_ptr<Layer>>*> active;
    if (spec_.uses_sensor()) active.push_back(&sensor_);
    if (spec_.uses_cam1()) active.push_back(&cam1_);
    if (spec_.uses_cam2()) active.push_back(&cam2_);

    int offset = 0;
    for (std::size_t b = 0; b < active.size(); ++b) {
        const int w = branch_widths_[b];
        Tensor slice(Shape{n, w});
        for (int i = 0; i < n; ++i) {
            std::copy(grad.data() + static_cast<std::int64_t>(i) * width + offset,
                      grad.data() + static_cast<std::int64_t>(i) * width + offset + w,
                      slice.data() + static_cast<std::int64_t>(i) * w);
        }
        run_stack_backward(*active[b], std::move(slice));
        offset += w;
    }
}

namespace {

void collect(std::vector<NamedTensor>& out, const std::string& prefix,
             std::vector<std::unique_ptr<Layer>>& layers,
             std::vector<NamedTensor> (Layer::*getter)()) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        for (NamedTensor& nt : (layers[i].get()->*getter)()) {
            out.push_back({prefix + "." + std::to_string(i) + "." + nt.name, nt.tensor});
        }
    }
}

}  // namespace

std::vector<NamedTensor> Model::parameters() {
    std::vector<NamedTensor> out;
    collect(out, "sensor", sensor_, &Layer::parameters);
    collect(out, "cam1", cam1_, &Layer::parameters);
    collect(out, "cam2", cam2_, &Layer::parameters);
    collect(out, "head", head_, &Layer::parameters);
    return out;
}

std::vector<NamedTensor> Model::gradients() {
    std::vector<NamedTensor> out;
    collect(out, "sensor", sensor_, &Layer::gradients);
    collect(out, "cam1", cam1_, &Layer::gradients);
    collect(out, "cam2", cam2_, &Layer::gradients);
    collect(out, "head", head_, &Layer::gradients);
    return out;
}

std::vector<NamedTensor> Model::buffers() {
    std::vector<NamedTensor> out;
    collect(out, "sensor", sensor_, &Layer::buffers);
    collect(out, "cam1", cam1_, &Layer::buffers);
    collect(out, "cam2", cam2_, &Layer::buffers);
    collect(out, "head", head_, &Layer::buffers);
    return out;
}

std::int64_t Model::parameter_count() {
    std::int64_t n = 0;
    for (const NamedTensor& p : parameters()) n += p.tensor->size();
    return n;
}

std::vector<std::unique_ptr<Layer>>& Model::branch_layers(const std::string& branch) {
    if (branch == "sensor") return sensor_;
    if (branch == "cam1") return cam1_;
    if (branch == "cam2") return cam2_;
    if (branch == "head") return head_;
    throw InputError("unknown branch: " + branch);
}

BinaryLabel predict_row(const Tensor& probs, int row) {
    const int k = probs.shape().dim(1);
    const double* r = probs.data() + static_cast<std::int64_t>(row) * k;
    int best = 0;
    for (int j = 1; j < k; ++j) {
        if (r[j] > r[best]) best = j;  // strict: an exact tie keeps class 0
    }
    return BinaryLabel{static_cast<std::uint8_t>(best)};
}

std::vector<BinaryLabel> predict(const Tensor& probs) {
    std::vector<BinaryLabel> out;
    const int n = probs.shape().dim(0);
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(predict_row(probs, i));
    return out;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch < 1) throw ConfigError("batch size must be >= 1");
    if (optimizer.lr < 0.0) throw ConfigError("learning rate must be >= 0");
    if (optimizer.lr > 0.0) optimizer.validate();
}

std::vector<BinaryLabel> evaluate(Model& model, const std::vector<FusedExample>& examples,
                                  int batch_size) {
    std::vector<BinaryLabel> out;
    out.reserve(examples.size());
    for (std::size_t begin = 0; begin < examples.size();
         begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end =
            std::min(examples.size(), begin + static_cast<std::size_t>(batch_size));
        ModalityBatch batch = model.make_batch(
            std::span<const FusedExample>(examples.data() + begin, end - begin));
        Tensor probs = model.forward(batch, Mode::Eval);
        for (int i = 0; i < probs.shape().dim(0); ++i) out.push_back(predict_row(probs, i));
    }
    return out;
}

std::vector<EpochLog> train_model(Model& model, const std::vector<FusedExample>& train_set,
                                  const std::vector<FusedExample>& val_set,
                                  const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty() || val_set.empty()) {
        throw InputError("training needs non-empty train and validation splits");
    }
    if (!model.standardizer().fitted() && model.spec().uses_sensor()) {
        std::vector<std::vector<double>> rows;
        rows.reserve(train_set.size());
        for (const FusedExample& e : train_set) rows.push_back(e.sensor);
        model.standardizer().fit(rows, model.spec().sensor_width);
    }

    // lr == 0 is the documented null optimizer: the loop runs, nothing moves.
    const bool stepping = cfg.optimizer.lr > 0.0;
    std::unique_ptr<Optimizer> optimizer;
    if (stepping) optimizer = std::make_unique<Optimizer>(cfg.optimizer);
    auto params = model.parameters();
    auto grads = model.gradients();

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<EpochLog> logs;
    logs.reserve(static_cast<std::size_t>(cfg.epochs));
    std::vector<FusedExample> scratch(static_cast<std::size_t>(cfg.batch));

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        model.rng().shuffle(order);

        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch));
            const std::size_t bn = end - begin;
            scratch.clear();
            std::vector<int> labels;
            labels.reserve(bn);
            for (std::size_t i = begin; i < end; ++i) {
                scratch.push_back(train_set[order[i]]);
                labels.push_back(train_set[order[i]].label.value);
            }
            ModalityBatch batch =
                model.make_batch(std::span<const FusedExample>(scratch.data(), bn));
            Tensor probs = model.forward(batch, Mode::Train);
            CrossEntropyResult ce = cross_entropy(probs, labels);
            if (!std::isfinite(ce.loss)) {
                throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(begin / cfg.batch + 1));
            }
            model.backward_logits(ce.grad_logits);
            if (stepping) optimizer->step(params, grads);
            loss_sum += ce.loss * static_cast<double>(bn);
            seen += bn;
        }

        std::vector<BinaryLabel> preds = evaluate(model, val_set, cfg.batch);
        std::vector<BinaryLabel> truths;
        truths.reserve(val_set.size());
        for (const FusedExample& e : val_set) truths.push_back(e.label);
        const ConfusionCounts counts = confusion(preds, truths);
        const MetricsReport report = metrics(counts, Averaging::PerClassPositive);

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / static_cast<double>(seen);
        log.val_accuracy = report.accuracy;
        log.val_f1 = report.f1;
        log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        logs.push_back(log);
    }
    return logs;
}

}  // namespace fallfuse
