#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "fallfuse/rng.hpp"
#include "fallfuse/tensor.hpp"

namespace fallfuse {

// Dropout and BatchNorm change behaviour between modes; everything else is
// mode-invariant.
enum class Mode { Train, Eval };

enum class LayerKind {
    Conv1D,
    Conv2D,
    MaxPool1D,
    MaxPool2D,
    BatchNorm,
    Dense,
    Dropout,
    ReLU,
    Flatten,
};

std::string layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

// Declarative layer description; the serializable unit of a model spec.
struct LayerSpec {
    LayerKind kind = LayerKind::ReLU;
    int filters = 0;        // Conv*
    int kernel = 0;         // Conv* extent (square in 2-D)
    int stride = 1;         // Conv* / MaxPool*
    int padding = 0;        // Conv*
    int window = 0;         // MaxPool*
    int units = 0;          // Dense output width
    double rate = 0.0;      // Dropout probability p in [0,1)
    double momentum = 0.9;  // BatchNorm running-stat blend
    double epsilon = 1e-5;  // BatchNorm

    static LayerSpec conv1d(int filters, int kernel, int stride = 1, int padding = 0);
    static LayerSpec conv2d(int filters, int kernel, int stride = 1, int padding = 0);
    static LayerSpec maxpool1d(int window, int stride = 0);  // stride 0 = window
    static LayerSpec maxpool2d(int window, int stride = 0);
    static LayerSpec batchnorm(double momentum = 0.9, double epsilon = 1e-5);
    static LayerSpec dense(int units);
    static LayerSpec dropout(double rate);
    static LayerSpec relu();
    static LayerSpec flatten();

    void validate() const;
    std::string describe() const;
};

struct NamedTensor {
    std::string name;
    Tensor* tensor;
};

// One network layer: owns its parameters, running buffers and the forward
// cache the backward pass needs. Tensors passed to forward/backward carry a
// leading batch dimension; init() and output_shape() take the per-example
// shape without it.
//
// backward() overwrites the parameter gradients from the cached forward and
// returns the gradient with respect to the input batch.
class Layer {
public:
    explicit Layer(LayerSpec spec) : spec_(std::move(spec)) {}
    virtual ~Layer() = default;

    const LayerSpec& spec() const { return spec_; }

    virtual void init(const Shape& input_shape, Rng& rng) = 0;
    virtual Shape output_shape(const Shape& input_shape) const = 0;
    virtual Tensor forward(const Tensor& input, Mode mode) = 0;
    virtual Tensor backward(const Tensor& grad_output) = 0;

    virtual std::vector<NamedTensor> parameters() { return {}; }
    virtual std::vector<NamedTensor> gradients() { return {}; }
    virtual std::vector<NamedTensor> buffers() { return {}; }

    // Dropout draws masks from the run's generator; no-op elsewhere.
    virtual void attach_rng(Rng*) {}

    bool has_cache() const { return cached_; }

protected:
    LayerSpec spec_;
    bool cached_ = false;
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec);

// Row-wise softmax with max-subtraction; rows of the result sum to 1.
Tensor softmax(const Tensor& logits);

// Mean negative log-likelihood over the batch, probabilities clamped to
// >= 1e-12 before the log. grad_logits is the fused softmax+CE gradient
// (probs - onehot)/batch, i.e. the gradient with respect to the logits
// that produced `probs`.
struct CrossEntropyResult {
    double loss = 0.0;
    Tensor grad_logits;
};

CrossEntropyResult cross_entropy(const Tensor& probs, const std::vector<int>& labels);

struct OptimizerConfig {
    enum class Algorithm { SGD, Adam };

    Algorithm algorithm = Algorithm::Adam;
    double lr = 1e-3;
    double momentum = 0.0;  // SGD
    double beta1 = 0.9;     // Adam
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;  // lr <= 0 is a config error
};

// SGD-with-momentum or Adam. Per-parameter state is keyed by parameter
// name, so the same named set must be passed on every step.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config);

    void step(const std::vector<NamedTensor>& params, const std::vector<NamedTensor>& grads);

    const OptimizerConfig& config() const { return config_; }

private:
    OptimizerConfig config_;
    std::int64_t t_ = 0;
    std::unordered_map<std::string, Tensor> velocity_;  // SGD
    std::unordered_map<std::string, Tensor> m_;         // Adam first moment
    std::unordered_map<std::string, Tensor> v_;         // Adam second moment
};

// Central finite differences against the analytical backward pass.
//
// The scalar loss is a fixed pseudo-random weighted sum of the outputs
// (weights in [0.5, 1.5], seeded). A plain unweighted sum is degenerate for
// BatchNorm, whose normalized outputs always sum to zero per channel; the
// weighting keeps every partial derivative observable while still reducing
// the output to one scalar.
//
// Every parameter and input coordinate is perturbed by +/-eps. Returns the
// worst relative error. Max-pool inputs at exact window ties are not
// differentiable there; callers use off-tie inputs.
double grad_check(Layer& layer, const Tensor& input, double eps, std::uint64_t seed);

}  // namespace fallfuse
