#include "amao/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "amao/error.hpp"
#include "amao/kernels.hpp"

namespace amao::defense {

std::string to_string(Kind k)
{
    return k == Kind::adversarial_training ? "adversarial_training" : "distillation";
}

void validate(const DefenseConfig& cfg)
{
    if (!(cfg.temperature >= 1.0))
        throw DataError("defense: temperature must be >= 1");
    if (!(cfg.mix_ratio > 0.0 && cfg.mix_ratio <= 1.0))
        throw DataError("defense: mix_ratio must lie in (0, 1]");
    if (!(cfg.epoch_cap_factor >= 1.0))
        throw DataError("defense: epoch_cap_factor must be >= 1");
}

nn::TinyCnn train_best_val(const nn::TinyCnn& init, const nn::TrainingSet& data, const Split& val,
                           const nn::TrainConfig& cfg, double* best_accuracy)
{
    nn::TinyCnn best = init;
    double best_acc = -1.0;
    nn::train_cnn(init, data, cfg, [&](std::size_t, const nn::TinyCnn& m, const nn::EpochStats&) {
        const double a = nn::accuracy(m, val.inputs, val.labels);
        if (a >= best_acc) { // ties go to the later, better-fitted epoch
            best_acc = a;
            best = m;
        }
        return false;
    });
    if (best_accuracy)
        *best_accuracy = best_acc;
    return best;
}

DefenseResult adversarial_training(const nn::TinyCnn& base, const Split& clean, const Split& adversarial,
                                   const Split& val, const nn::TrainConfig& base_cfg, const DefenseConfig& cfg)
{
    validate(cfg);
    if (clean.inputs.empty())
        throw DataError("adversarial_training: no clean samples");
    const std::size_t classes = base.shape.classes;
    nn::TrainingSet data;
    for (std::size_t i = 0; i < clean.inputs.size(); ++i)
        data.add(clean.inputs[i], clean.labels[i], classes);
    if (!adversarial.inputs.empty()) {
        const auto n_adv = static_cast<std::size_t>(std::llround(cfg.mix_ratio * static_cast<double>(clean.inputs.size())));
        for (std::size_t i = 0; i < n_adv; ++i) {
            const std::size_t k = i % adversarial.inputs.size();
            data.add(adversarial.inputs[k], adversarial.labels[k], classes);
        }
    }

    // Fine-tuning continues from the base weights, so the schedule starts at
    // the base run's final learning rate.
    nn::TrainConfig tc = base_cfg;
    tc.epochs = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.epoch_cap_factor * static_cast<double>(base_cfg.epochs))));
    tc.lr = base_cfg.lr * base_cfg.final_lr_fraction;
    tc.final_lr_fraction = 1.0;
    tc.seed = base_cfg.seed + 1;

    DefenseResult r;
    r.model = base;
    r.val_accuracy = -1.0;
    r.reached_target = false;
    nn::train_cnn(base, data, tc, [&](std::size_t epoch, const nn::TinyCnn& m, const nn::EpochStats&) {
        const double a = nn::accuracy(m, val.inputs, val.labels);
        if (a > r.val_accuracy) {
            r.val_accuracy = a;
            r.model = m;
            r.epochs = epoch + 1;
        }
        if (a >= cfg.retrain_target) {
            r.model = m;
            r.val_accuracy = a;
            r.epochs = epoch + 1;
            r.reached_target = true;
            return true;
        }
        return false;
    });
    return r;
}

std::vector<std::vector<double>> soft_labels(const nn::TinyCnn& teacher, std::span<const Canvas> inputs, double T)
{
    std::vector<std::vector<double>> out(inputs.size());
    const auto n = static_cast<std::ptrdiff_t>(inputs.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = nn::probabilities(teacher, inputs[static_cast<std::size_t>(i)], T);
    return out;
}

DistillResult distill(const nn::CnnShape& shape, const Split& train, const Split& val, const nn::TrainConfig& hp,
                      const DefenseConfig& cfg)
{
    validate(cfg);
    nn::TrainingSet hard;
    for (std::size_t i = 0; i < train.inputs.size(); ++i)
        hard.add(train.inputs[i], train.labels[i], shape.classes);

    DistillResult r;
    nn::TrainConfig tc = hp;
    tc.temperature = cfg.temperature;
    // Initial output weights scaled by T, so in the units training works in
    // they start at the ordinary initialisation.
    const auto init = [&](std::uint64_t seed) {
        auto m = nn::TinyCnn::init(shape, seed);
        nn::scale_logits(m, cfg.temperature);
        return m;
    };
    r.teacher = train_best_val(init(hp.seed), hard, val, tc);

    nn::TrainingSet soft;
    const auto targets = soft_labels(r.teacher, train.inputs, cfg.temperature);
    for (std::size_t i = 0; i < train.inputs.size(); ++i)
        soft.add_soft(train.inputs[i], targets[i]);
    tc.seed = hp.seed + 1;
    r.student = train_best_val(init(hp.seed + 1), soft, val, tc, &r.val_accuracy);
    return r;
}

void write_matrix_csv(std::span<const MatrixRow> rows, std::ostream& out)
{
    out << "model,defense,dataset,accuracy,n\n";
    char buf[32];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.4f", r.accuracy);
        out << r.model << ',' << r.defense << ',' << r.dataset << ',' << buf << ',' << r.n << '\n';
    }
}

} // namespace amao::defense
