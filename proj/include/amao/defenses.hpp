#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "amao/cnn.hpp"
#include "amao/dataset.hpp"

namespace amao::defense {

enum class Kind { adversarial_training, distillation };

std::string to_string(Kind k);

struct DefenseConfig {
    Kind kind = Kind::adversarial_training;
    double mix_ratio = 0.5;      // adversarial samples per clean sample in the retraining set
    double temperature = 20.0;   // distillation softmax temperature
    double retrain_target = 0.0; // clean validation accuracy that ends retraining
    double epoch_cap_factor = 3.0;
};

void validate(const DefenseConfig& cfg);

struct Split {
    std::vector<Canvas> inputs;
    std::vector<int> labels;
};

struct DefenseResult {
    nn::TinyCnn model;
    std::size_t epochs = 0;
    double val_accuracy = 0.0;
    bool reached_target = true; // false: cap hit, best epoch returned
};

// One retraining pass from `base` on clean data plus adversarial samples
// (cycled to mix_ratio * |clean|). Runs at least one epoch and stops once
// clean validation accuracy reaches retrain_target, or after
// epoch_cap_factor * base_cfg.epochs epochs with the best epoch kept.
DefenseResult adversarial_training(const nn::TinyCnn& base, const Split& clean, const Split& adversarial,
                                   const Split& val, const nn::TrainConfig& base_cfg, const DefenseConfig& cfg);

// Teacher trained with a temperature-T softmax, student trained on the
// teacher's probabilities at T; both keep the best validation epoch. The
// student is used at T = 1.
struct DistillResult {
    nn::TinyCnn teacher;
    nn::TinyCnn student;
    double val_accuracy = 0.0;
};
DistillResult distill(const nn::CnnShape& shape, const Split& train, const Split& val, const nn::TrainConfig& hp,
                      const DefenseConfig& cfg);

// Class-probability targets at temperature T, one row per input.
std::vector<std::vector<double>> soft_labels(const nn::TinyCnn& teacher, std::span<const Canvas> inputs, double T);

// Trains from `init` and returns the epoch with the best validation accuracy.
nn::TinyCnn train_best_val(const nn::TinyCnn& init, const nn::TrainingSet& data, const Split& val,
                           const nn::TrainConfig& cfg, double* best_accuracy = nullptr);

struct MatrixRow {
    std::string model;
    std::string defense;
    std::string dataset;
    double accuracy = 0.0;
    std::size_t n = 0;
};

// Columns: model,defense,dataset,accuracy,n
void write_matrix_csv(std::span<const MatrixRow> rows, std::ostream& out);

} // namespace amao::defense
