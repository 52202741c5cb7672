#include "amao/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <tuple>

#include "amao/error.hpp"

namespace amao::attack {

void validate(const AttackConfig& cfg)
{
    if (!(cfg.epsilon > 0.0))
        throw DataError("attack: epsilon must be positive");
    if (cfg.max_loops < 1)
        throw DataError("attack: max_loops must be at least 1");
    if (!(cfg.growth >= 1.0))
        throw DataError("attack: growth factor must be at least 1");
    if (cfg.cw_c < 0.0 || cfg.cw_lr <= 0.0 || cfg.kappa < 0.0 || cfg.noise_sigma < 0.0)
        throw DataError("attack: negative or zero step parameters");
}

bool evades(int predicted, int label, const AttackConfig& cfg)
{
    return cfg.target_class ? predicted == *cfg.target_class : predicted != label;
}

namespace {

double norm2(const Canvas& v)
{
    double s = 0.0;
    for (double x : v)
        s += x * x;
    return std::sqrt(s);
}

void apply_mask(Canvas& v, std::span<const double> mask)
{
    if (mask.empty())
        return;
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] *= mask[i];
}

void project(Canvas& delta, double epsilon)
{
    const double n = norm2(delta);
    const double cap = epsilon * (1.0 - 1e-9);
    if (n > cap)
        for (auto& d : delta)
            d *= cap / n;
}

Canvas clamp_add(const Canvas& x, const Canvas& d)
{
    Canvas out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = std::clamp(x[i] + d[i], 0.0, 255.0);
    return out;
}

// Margin of the classification we are trying to undo, and the logit
// direction that increases it.
double margin(const std::vector<double>& z, int label, const AttackConfig& cfg, std::vector<double>* dz)
{
    const auto best_other = [&](int skip) {
        int j = -1;
        for (int k = 0; k < static_cast<int>(z.size()); ++k)
            if (k != skip && (j < 0 || z[k] > z[j]))
                j = k;
        return j;
    };
    int pos, neg;
    if (cfg.target_class) {
        neg = *cfg.target_class;
        pos = best_other(neg);
    } else {
        pos = label;
        neg = best_other(label);
    }
    if (neg < 0 || pos < 0)
        return -cfg.kappa; // single class: nothing to undo
    if (dz) {
        dz->assign(z.size(), 0.0);
        (*dz)[pos] = 1.0;
        (*dz)[neg] = -1.0;
    }
    return z[pos] - z[neg];
}

// Shared C&W core: Adam over delta against the summed clipped margin of all
// `xs` plus the L2 penalty. Returns the lowest-objective iterate.
Canvas optimize_noise(const nn::TinyCnn& m, std::span<const Canvas> xs, int label, const AttackConfig& cfg,
                      std::span<const double> mask, Canvas delta)
{
    apply_mask(delta, mask);
    project(delta, cfg.epsilon);
    const std::size_t n = delta.size();
    const double pen = cfg.cw_c / (255.0 * 255.0);
    Canvas mom(n, 0.0), vel(n, 0.0), grad(n);
    Canvas best = delta;
    double best_obj = INFINITY;
    constexpr double b1 = 0.9, b2 = 0.999, eps_adam = 1e-8;

    for (std::size_t step = 0;; ++step) {
        double obj = 0.0;
        for (double d : delta)
            obj += pen * d * d;
        std::fill(grad.begin(), grad.end(), 0.0);
        for (const auto& x : xs) {
            const auto xp = clamp_add(x, delta);
            std::vector<double> dz;
            const double mg = margin(nn::logits(m, xp), label, cfg, &dz);
            obj += std::max(mg, -cfg.kappa);
            if (mg <= -cfg.kappa || step == cfg.cw_steps)
                continue;
            const auto g = nn::input_gradient(m, xp, dz);
            for (std::size_t i = 0; i < n; ++i) {
                const double raw = x[i] + delta[i];
                if (raw > 0.0 && raw < 255.0)
                    grad[i] += g[i];
            }
        }
        if (obj < best_obj) {
            best_obj = obj;
            best = delta;
        }
        if (step == cfg.cw_steps)
            break;
        for (std::size_t i = 0; i < n; ++i)
            grad[i] += 2.0 * pen * delta[i];
        apply_mask(grad, mask);
        const double t = static_cast<double>(step + 1);
        for (std::size_t i = 0; i < n; ++i) {
            mom[i] = b1 * mom[i] + (1 - b1) * grad[i];
            vel[i] = b2 * vel[i] + (1 - b2) * grad[i] * grad[i];
            const double mh = mom[i] / (1 - std::pow(b1, t));
            const double vh = vel[i] / (1 - std::pow(b2, t));
            delta[i] -= cfg.cw_lr * mh / (std::sqrt(vh) + eps_adam);
        }
        if (xs.size() == 1)
            for (std::size_t i = 0; i < n; ++i)
                delta[i] = std::clamp(delta[i], -xs[0][i], 255.0 - xs[0][i]);
        project(delta, cfg.epsilon);
    }
    return best;
}

} // namespace

AdversarialImage apply_noise(const Canvas& base, const Canvas& delta, double epsilon, std::span<const double> mask)
{
    Canvas d = delta;
    apply_mask(d, mask);
    AdversarialImage a;
    a.base = base;
    a.perturbed = clamp_add(base, d);
    a.noise.resize(base.size());
    for (std::size_t i = 0; i < base.size(); ++i)
        a.noise[i] = a.perturbed[i] - base[i];
    a.l2 = norm2(a.noise);
    const double cap = epsilon * (1.0 - 1e-9);
    if (a.l2 > cap) {
        const double s = cap / a.l2;
        for (std::size_t i = 0; i < base.size(); ++i) {
            a.noise[i] *= s;
            a.perturbed[i] = base[i] + a.noise[i];
        }
        a.l2 = norm2(a.noise);
    }
    return a;
}

AdversarialImage fgsm(const nn::TinyCnn& m, const Canvas& x, int label, const AttackConfig& cfg,
                      std::span<const double> mask)
{
    const int wrt = cfg.target_class ? *cfg.target_class : label;
    const double dir = cfg.target_class ? -1.0 : 1.0;
    const auto g = nn::grad_input(m, x, wrt);
    Canvas d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        d[i] = g[i] > 0.0 ? dir * cfg.fgsm_step : g[i] < 0.0 ? -dir * cfg.fgsm_step : 0.0;
    return apply_noise(x, d, cfg.epsilon, mask);
}

AdversarialImage cw_l2(const nn::TinyCnn& m, const Canvas& x, int label, const AttackConfig& cfg,
                       std::span<const double> mask)
{
    return cw_l2_from(m, x, label, cfg, mask, Canvas(x.size(), 0.0));
}

AdversarialImage cw_l2_from(const nn::TinyCnn& m, const Canvas& x, int label, const AttackConfig& cfg,
                            std::span<const double> mask, Canvas init)
{
    const Canvas xs[1] = {x};
    const auto d = optimize_noise(m, xs, label, cfg, mask, std::move(init));
    return apply_noise(x, d, cfg.epsilon, mask);
}

Canvas per_class_noise(const nn::TinyCnn& m, std::span<const Canvas> xs, int label, const AttackConfig& cfg,
                       std::span<const double> mask)
{
    if (xs.empty())
        throw DataError("per_class_noise: no samples for class " + std::to_string(label));
    std::mt19937_64 rng(cfg.seed ^ (0xC1A55ULL * static_cast<std::uint64_t>(label + 1)));
    Canvas init(xs[0].size(), 0.0);
    if (cfg.noise_sigma > 0.0) {
        std::normal_distribution<double> g(0.0, cfg.noise_sigma);
        for (auto& v : init)
            v = g(rng);
    }
    return optimize_noise(m, xs, label, cfg, mask, std::move(init));
}

std::vector<double> realizable_mask(std::size_t n, std::size_t current_len, std::size_t width, std::size_t side)
{
    const std::size_t height = (std::max<std::size_t>(current_len, 1) + width - 1) / width;
    return byte_range_mask(0, n, width, height, side);
}

Bytes canvas_to_bytes(const Canvas& c, std::size_t n, std::size_t width, std::size_t height, std::size_t side,
                      ByteView fallback)
{
    const std::size_t r0 = crop_offset(height, side), c0 = crop_offset(width, side);
    Bytes out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = i / width, col = i % width;
        if (r >= r0 && col >= c0 && r - r0 < side && col - c0 < side)
            out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(c[(r - r0) * side + col - c0], 0.0, 255.0)));
        else
            out[i] = i < fallback.size() ? fallback[i] : 0;
    }
    return out;
}

LoopResult closed_loop(const LoopContext& ctx, const isa::ByteProgram& prog, int label)
{
    if (!ctx.model)
        throw DataError("closed_loop: no white-box model");
    validate(ctx.cfg);
    const std::size_t side = ctx.model->shape.input_side;
    const auto classify_all = [&](const Bytes& b) {
        const auto img = bytes_to_image(b, ctx.policy);
        std::vector<int> preds;
        bool all = true;
        for (const auto& t : ctx.targets) {
            preds.push_back(t.classify(b, img));
            all = all && evades(preds.back(), label, ctx.cfg);
        }
        return std::pair{preds, all};
    };

    LoopResult res;
    res.program = prog;
    for (std::size_t k = 0; k < prog.size(); ++k)
        res.trace.decisions.push_back(align::Decision::match(k));
    res.trace.achieved_length = prog.text.size();
    res.first_program = prog.text;
    if (classify_all(prog.text).second) {
        res.evaded = true;
        return res;
    }

    const std::size_t m = prog.text.size();
    const auto n = static_cast<std::size_t>(std::ceil(ctx.cfg.growth * static_cast<double>(m)));
    const std::size_t width = ctx.policy.width_for(n);
    isa::ByteProgram current = prog;
    AttackConfig cfg = ctx.cfg;
    std::uint64_t seed = ctx.cfg.seed;
    for (auto b : prog.text)
        seed = (seed ^ b) * 0x100000001B3ULL;

    // Ranks realized candidates that evade nothing: lower is closer to evasion.
    const auto margin = [&](const Bytes& b) {
        const auto z = nn::logits(*ctx.model, to_canvas(bytes_to_image(b, ctx.policy), side));
        if (cfg.target_class) {
            double best = -1e300;
            for (std::size_t j = 0; j < z.size(); ++j)
                if (static_cast<int>(j) != *cfg.target_class)
                    best = std::max(best, z[j]);
            return best - z[static_cast<std::size_t>(*cfg.target_class)];
        }
        double best = -1e300;
        for (std::size_t j = 0; j < z.size(); ++j)
            if (static_cast<int>(j) != label)
                best = std::max(best, z[j]);
        return z[static_cast<std::size_t>(label)] - best;
    };

    for (std::size_t loop = 1; loop <= ctx.cfg.max_loops; ++loop) {
        LoopRecord rec;
        rec.loop = loop;
        const std::size_t cur_len = current.text.size();
        const auto img = bytes_to_image(current.text, WidthPolicy::fixed(width));
        const auto x = to_canvas(img, side);
        const auto mask = realizable_mask(n, cur_len, width, side);

        struct Candidate {
            isa::ByteProgram program;
            align::AlignmentTrace trace;
            std::vector<int> preds;
            bool all = false;
            std::size_t evaded = 0;
            double margin = 0.0;
        };
        std::optional<Candidate> best;
        std::string overflow;
        for (std::size_t r = 0; r < std::max<std::size_t>(1, cfg.restarts); ++r) {
            AdversarialImage adv;
            if (r == 0 && loop == 1 && ctx.first_loop_noise) {
                adv = apply_noise(x, *ctx.first_loop_noise, cfg.epsilon, mask);
            } else {
                // Anything but the first candidate of the first loop starts
                // C&W from fresh Gaussian noise, so a loop whose realization
                // failed does not replay the same target.
                Canvas init(x.size(), 0.0);
                if ((loop > 1 || r > 0) && cfg.noise_sigma > 0.0) {
                    std::mt19937_64 rng(seed ^ (0x100000001B3ULL * (loop * 64 + r)));
                    std::normal_distribution<double> g(0.0, cfg.noise_sigma);
                    for (auto& v : init)
                        v = g(rng);
                }
                adv = cw_l2_from(*ctx.model, x, label, cfg, mask, std::move(init));
            }
            const auto target = canvas_to_bytes(adv.perturbed, n, width, img.height, side, current.text);
            if (loop == 1 && r == 0)
                res.first_target = target;
            try {
                auto problem = align::make_problem(target, prog, ctx.vocab, ctx.metric);
                const auto al = align::align(problem);
                Candidate c;
                c.program = align::apply_trace(prog, al.trace, ctx.vocab);
                c.trace = al.trace;
                std::tie(c.preds, c.all) = classify_all(c.program.text);
                c.margin = margin(c.program.text);
                const auto out_img = bytes_to_image(c.program.text, ctx.policy);
                for (std::size_t t = 0; t < ctx.targets.size(); ++t) {
                    c.evaded += evades(c.preds[t], label, cfg);
                    if (ctx.targets[t].margin)
                        c.margin += ctx.targets[t].margin(c.program.text, out_img, label);
                }
                const bool better = !best || c.evaded > best->evaded ||
                                    (c.evaded == best->evaded && c.margin < best->margin);
                if (better)
                    best = std::move(c);
                if (best->all)
                    break;
            } catch (const align::AlignError& e) {
                if (e.code() != align::AlignErrc::DisplacementOverflow)
                    throw;
                overflow = e.what();
            }
        }

        res.loops = loop;
        if (!best) {
            rec.note = overflow;
            res.records.push_back(rec);
        } else {
            rec.distance = best->trace.total_cost;
            rec.length = best->program.text.size();
            rec.predictions = best->preds;
            res.records.push_back(rec);
            res.program = std::move(best->program);
            res.trace = std::move(best->trace);
            res.distance = rec.distance;
            if (loop == 1)
                res.first_program = res.program.text;
            if (best->all) {
                res.evaded = true;
                return res;
            }
            current = res.program;
        }
        cfg.kappa *= ctx.cfg.escalation;
    }
    return res;
}

} // namespace amao::attack
