#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amao/align.hpp"
#include "amao/cnn.hpp"
#include "amao/codec.hpp"
#include "amao/dataset.hpp"
#include "amao/isa.hpp"

namespace amao::attack {

struct AttackConfig {
    double epsilon = 4000.0;   // L2 budget on the canvas, pixel units
    double fgsm_step = 24.0;   // per-pixel FGSM step
    double cw_c = 0.01;        // weight of ||delta / 255||^2
    std::size_t cw_steps = 40;
    double cw_lr = 15.0;       // Adam step, pixel units
    double kappa = 20.0;       // logit margin counted as success
    double noise_sigma = 8.0;  // Gaussian init of per-class noise
    std::optional<int> target_class;
    std::size_t max_loops = 10;
    double growth = 1.25;      // B1 length relative to the original text
    double escalation = 2.0;   // kappa multiplier per closed-loop iteration
    std::size_t restarts = 3;  // C&W targets realized per closed-loop iteration
    std::uint64_t seed = 1;
};

void validate(const AttackConfig& cfg);

struct AdversarialImage {
    Canvas base;
    Canvas noise;     // perturbed - base
    Canvas perturbed; // clamp(base + delta, 0, 255)
    double l2 = 0.0;  // ||noise||_2, strictly below epsilon
};

// Untargeted success is argmax != label, targeted is argmax == target.
bool evades(int predicted, int label, const AttackConfig& cfg);

// Clamps base + delta into range and rescales the effective noise so its L2
// norm stays strictly below epsilon. `mask` (empty = everywhere) zeroes
// delta outside realizable cells.
AdversarialImage apply_noise(const Canvas& base, const Canvas& delta, double epsilon,
                             std::span<const double> mask = {});

AdversarialImage fgsm(const nn::TinyCnn& m, const Canvas& x, int label, const AttackConfig& cfg,
                      std::span<const double> mask = {});

// Penalty-form C&W: Adam on max(margin, -kappa) + c ||delta/255||^2 with a
// fixed c, projected to the epsilon ball. Returns the iterate with the lowest
// objective, which may be delta = 0.
AdversarialImage cw_l2(const nn::TinyCnn& m, const Canvas& x, int label, const AttackConfig& cfg,
                       std::span<const double> mask = {});
// Same, starting from `init` instead of delta = 0.
AdversarialImage cw_l2_from(const nn::TinyCnn& m, const Canvas& x, int label, const AttackConfig& cfg,
                            std::span<const double> mask, Canvas init);

// One delta optimised jointly over `xs` (all of class `label`), starting from
// Gaussian noise with sigma = cfg.noise_sigma.
Canvas per_class_noise(const nn::TinyCnn& m, std::span<const Canvas> xs, int label, const AttackConfig& cfg,
                       std::span<const double> mask = {});

// A classifier consulted by the closed loop. Only the white-box model
// supplies gradients; every target must be evaded.
struct Target {
    std::string name;
    std::function<int(const Bytes&, const GrayImage&)> classify;
    // Optional: true-class score minus the best other score (negative once
    // evaded), used to rank candidates that fail this target.
    std::function<double(const Bytes&, const GrayImage&, int)> margin;
};

struct LoopRecord {
    std::size_t loop = 0;
    std::vector<int> predictions; // one per target, on the re-imaged executable
    double distance = 0.0;        // alignment cost against B1
    std::size_t length = 0;       // executable text length
    std::string note;             // non-empty when the loop produced no program
};

struct LoopResult {
    isa::ByteProgram program;
    std::size_t loops = 0;
    bool evaded = false;
    double distance = 0.0;
    align::AlignmentTrace trace; // of the returned program against the original
    Bytes first_target;          // B1 of loop 1, first restart
    Bytes first_program;         // executable text after loop 1
    std::vector<LoopRecord> records;
};

struct LoopContext {
    const nn::TinyCnn* model = nullptr;
    std::vector<Target> targets;
    WidthPolicy policy = WidthPolicy::default_table();
    isa::Vocabulary vocab = isa::default_vocabulary();
    align::Metric metric = align::Metric::pixel_l2;
    AttackConfig cfg;
    const Canvas* first_loop_noise = nullptr; // per-class delta for loop 1; cw_l2 if null
};

// Canvas cells holding the first `n` bytes of a program laid out at `width`.
std::vector<double> realizable_mask(std::size_t n, std::size_t current_len, std::size_t width, std::size_t side);

// Reads bytes [0, n) back out of a perturbed canvas; positions outside the
// canvas keep `fallback` (zero past its end).
Bytes canvas_to_bytes(const Canvas& c, std::size_t n, std::size_t width, std::size_t height, std::size_t side,
                      ByteView fallback);

LoopResult closed_loop(const LoopContext& ctx, const isa::ByteProgram& prog, int label);

} // namespace amao::attack
