#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fallfuse/dataset.hpp"
#include "fallfuse/layers.hpp"
#include "fallfuse/preprocess.hpp"

namespace fallfuse {

enum class Variant {
    Fusion,
    SensorMLP,
    Sensor1DCNN,
    Camera1,
    Camera2,
    Camera1And2,
    MultiSensorFusion,
};

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// Default layer sizes. The architecture's layer kinds are fixed; the
// extents are free parameters surfaced through the run config.
struct ModelProfile {
    int sensor_filters = 16;
    int cam_filters1 = 16;
    int cam_filters2 = 32;
    int head_width1 = 128;
    int head_width2 = 64;
    double dropout = 0.3;
    int mlp_hidden = 64;  // SensorMLP feature width
};

// Declarative network description: per-branch layer stacks plus the MLP
// head that consumes the concatenated embeddings.
struct ModelSpec {
    Variant variant = Variant::Fusion;
    int sensor_width = 4;   // sensor channels (4 = wrist; wider = multi-sensor)
    int sensor_length = 4;  // the per-timestamp vector is repeated to this length
    std::vector<LayerSpec> sensor_branch;
    std::vector<LayerSpec> cam1_branch;
    std::vector<LayerSpec> cam2_branch;
    std::vector<LayerSpec> head;

    bool uses_sensor() const;
    bool uses_cam1() const;
    bool uses_cam2() const;

    static ModelSpec make(Variant variant, const ModelProfile& profile = {},
                          int sensor_width = 4);
    void validate() const;
};

// Batched modality inputs: sensor [N x C x L], cameras [N x 1 x 32 x 32].
struct ModalityBatch {
    int batch = 0;
    bool has_sensor = false;
    bool has_cam1 = false;
    bool has_cam2 = false;
    Tensor sensor;
    Tensor cam1;
    Tensor cam2;
};

// A buildable, trainable network. One deterministic generator drives the
// whole run: parameter init at build, then per epoch one shuffle followed
// by that epoch's dropout masks.
class Model {
public:
    static Model build(const ModelSpec& spec, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }
    Standardizer& standardizer() { return standardizer_; }
    const Standardizer& standardizer() const { return standardizer_; }
    Rng& rng() { return rng_; }

    // Assembles batched tensors from raw examples: slices the sensor vector
    // to the spec width, standardizes it, and repeats it along the length
    // axis. Throws ModalityError when an example cannot supply a modality.
    ModalityBatch make_batch(std::span<const FusedExample> examples) const;

    Tensor forward_logits(const ModalityBatch& input, Mode mode);
    // Probabilities, rows summing to 1.
    Tensor forward(const ModalityBatch& input, Mode mode);
    // Backpropagates the fused softmax+cross-entropy gradient and fills
    // every parameter gradient.
    void backward_logits(const Tensor& grad_logits);

    std::vector<NamedTensor> parameters();
    std::vector<NamedTensor> gradients();
    std::vector<NamedTensor> buffers();
    std::int64_t parameter_count();

    // Branch access for checkpointing.
    std::vector<std::unique_ptr<Layer>>& branch_layers(const std::string& branch);

private:
    Model(ModelSpec spec, std::uint64_t seed);

    ModelSpec spec_;
    Rng rng_;
    std::vector<std::unique_ptr<Layer>> sensor_;
    std::vector<std::unique_ptr<Layer>> cam1_;
    std::vector<std::unique_ptr<Layer>> cam2_;
    std::vector<std::unique_ptr<Layer>> head_;
    Standardizer standardizer_;
    std::vector<int> branch_widths_;  // flattened embedding width per active branch
};

// Argmax of a probability row; an exact 0.5/0.5 tie resolves to no-fall.
BinaryLabel predict_row(const Tensor& probs, int row);
std::vector<BinaryLabel> predict(const Tensor& probs);

struct TrainConfig {
    int epochs = 50;
    int batch = 64;
    OptimizerConfig optimizer;
    std::uint64_t seed = 1;
    bool early_stop_disabled = true;  // curves always run the full length

    void validate() const;
};

struct EpochLog {
    int epoch = 0;  // 1-based, contiguous
    double train_loss = 0.0;
    double val_accuracy = 0.0;
    double val_f1 = 0.0;
    double seconds = 0.0;  // wall clock, informational
};

// Minibatch training: per epoch a seeded shuffle, forward/backward/step
// over minibatches, then Eval-mode validation metrics. Exactly
// cfg.epochs entries come back; there is no early stopping. A learning
// rate of exactly 0 runs the full loop with the optimizer disabled.
std::vector<EpochLog> train_model(Model& model, const std::vector<FusedExample>& train_set,
                                  const std::vector<FusedExample>& val_set,
                                  const TrainConfig& cfg);

// Eval-mode predictions over a whole set, batched.
std::vector<BinaryLabel> evaluate(Model& model, const std::vector<FusedExample>& examples,
                                  int batch_size = 64);

}  // namespace fallfuse
