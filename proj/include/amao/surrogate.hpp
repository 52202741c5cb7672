#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "amao/dataset.hpp"

// Feature-based black-box stand-in: counts of the most frequent byte 4-grams,
// opcode counts from a linear sweep and whole-image statistics, classified by boosted depth-1 stumps with a
// softmax link.
namespace amao::trees {

struct SurrogateConfig {
    std::size_t top_f = 500;     // 4-gram vocabulary size
    std::size_t rounds = 200;    // boosted stumps
    std::size_t row_means = 16;  // leading image rows summarised by their mean
    bool opcodes = true;         // per-opcode instruction counts
    double shrinkage = 0.2;
};

// One stump predicts a vector of per-class increments on each side.
struct Stump {
    std::uint32_t feature = 0;
    double threshold = 0.0; // left when value <= threshold
    std::vector<double> left, right;
};

struct Surrogate {
    SurrogateConfig cfg;
    std::vector<std::uint32_t> ngrams; // big-endian packed 4-grams
    std::vector<int> classes;          // sorted class ids seen in training
    std::vector<double> prior;         // initial scores per class
    std::vector<Stump> stumps;

    std::size_t feature_count() const { return ngrams.size() + opcode_features() + 2 + cfg.row_means; }
    std::size_t opcode_features() const;
};

struct Prediction {
    int label = 0;
    std::vector<double> probs; // aligned with Surrogate::classes
};

std::vector<double> features(const Surrogate& m, ByteView bytes, const GrayImage& img);

Surrogate train_surrogate(std::span<const LabeledSample> data, const SurrogateConfig& cfg = {});
Prediction predict(const Surrogate& m, ByteView bytes, const GrayImage& img);

// Throws DataError when a sample carries a class the model never saw.
double accuracy(const Surrogate& m, std::span<const LabeledSample> data);

void save_surrogate(const Surrogate& m, std::ostream& out);
Surrogate load_surrogate(std::istream& in);

} // namespace amao::trees
