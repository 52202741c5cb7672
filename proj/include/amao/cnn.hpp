#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "amao/dataset.hpp"
#include "amao/kernels.hpp"

// conv5x5 -> relu -> pool2 -> conv5x5 -> relu -> pool2 -> dense -> relu ->
// dropout -> dense. Inputs are pixel-valued canvases; the network divides by
// 255 itself, and input gradients are reported per pixel unit.
namespace amao::nn {

struct CnnShape {
    std::size_t input_side = 64;
    std::size_t conv1 = 8;
    std::size_t conv2 = 16;
    std::size_t hidden = 128;
    std::size_t classes = 2;
    double dropout = 0.5;

    static constexpr std::size_t kernel = 5;
    std::size_t side1() const { return input_side - kernel + 1; }
    std::size_t pool1() const { return side1() / 2; }
    std::size_t side2() const { return pool1() - kernel + 1; }
    std::size_t pool2() const { return side2() / 2; }
    std::size_t flat() const { return conv2 * pool2() * pool2(); }
    void validate() const;
    bool operator==(const CnnShape&) const = default;
};

struct TinyCnn {
    CnnShape shape;
    std::vector<double> w1, b1, w2, b2, w3, b3, w4, b4;

    std::array<std::vector<double>*, 8> tensors();
    std::array<const std::vector<double>*, 8> tensors() const;
    std::size_t parameter_count() const;

    // He-uniform weights, zero biases.
    static TinyCnn init(const CnnShape& shape, std::uint64_t seed);
    // Same tensor sizes, every value zero.
    static TinyCnn zeros(const CnnShape& shape);
};

std::vector<double> logits(const TinyCnn& m, const Canvas& x);
std::vector<double> probabilities(const TinyCnn& m, const Canvas& x, double temperature = 1.0);
int predict(const TinyCnn& m, const Canvas& x);

// d(sum_j dlogits[j] * logit_j) / dx, same shape as x.
Canvas input_gradient(const TinyCnn& m, const Canvas& x, std::span<const double> dlogits);

// Cross-entropy of softmax(logits) against `label`, and its input gradient.
double cross_entropy(const TinyCnn& m, const Canvas& x, int label);
Canvas grad_input(const TinyCnn& m, const Canvas& x, int label);

struct TrainConfig {
    std::size_t epochs = 12;
    double lr = 0.01;
    double final_lr_fraction = 1.0; // lr decays linearly to lr * this by the last epoch
    std::size_t batch = 16;
    double momentum = 0.9;
    double temperature = 1.0; // softmax temperature of the loss
    std::uint64_t seed = 1;
};

// Targets are probability vectors: one-hot for ordinary training, teacher
// outputs for distillation.
struct TrainingSet {
    std::vector<Canvas> inputs;
    std::vector<std::vector<double>> targets;

    void add(Canvas x, int label, std::size_t classes);
    void add_soft(Canvas x, std::vector<double> target);
    std::size_t size() const { return inputs.size(); }
};

struct EpochStats {
    double loss = 0.0;
    double train_accuracy = 0.0;
};

// Called after every epoch; returning true stops training early.
using EpochHook = std::function<bool(std::size_t epoch, const TinyCnn&, const EpochStats&)>;

// Mini-batch SGD with momentum on the given starting weights. Deterministic
// for a given seed. Throws amao::Error if the loss stops being finite.
TinyCnn train_cnn(TinyCnn model, const TrainingSet& data, const TrainConfig& cfg, const EpochHook& hook = {});

// Multiplies the output layer, and so every logit, by s.
void scale_logits(TinyCnn& m, double s);

double accuracy(const TinyCnn& m, std::span<const Canvas> inputs, std::span<const int> labels);

void save_cnn(const TinyCnn& m, std::ostream& out);
TinyCnn load_cnn(std::istream& in);
void save_cnn(const TinyCnn& m, const std::string& path);
TinyCnn load_cnn(const std::string& path);

} // namespace amao::nn
