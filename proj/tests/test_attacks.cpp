#include "doctest.h"

#include <cmath>
#include <random>

#include "amao/attacks.hpp"
#include "amao/progen.hpp"
#include "oracles.hpp"

using namespace amao;
using namespace amao::attack;

namespace {

constexpr std::size_t kSide = 16;

Canvas corner_image(int label, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> noise(0.0, 40.0);
    Canvas c(kSide * kSide);
    for (auto& v : c)
        v = noise(rng);
    const std::size_t off = label == 0 ? 0 : kSide / 2;
    for (std::size_t r = off; r < off + kSide / 2; ++r)
        for (std::size_t col = off; col < off + kSide / 2; ++col)
            c[r * kSide + col] = 200.0 + noise(rng);
    return c;
}

struct Toy {
    nn::TinyCnn model;
    std::vector<Canvas> train, test;
    std::vector<int> train_y, test_y;
};

const Toy& toy()
{
    static const Toy t = [] {
        Toy t;
        std::mt19937_64 rng(21);
        nn::TrainingSet data;
        for (int i = 0; i < 160; ++i) {
            t.train.push_back(corner_image(i % 2, rng));
            t.train_y.push_back(i % 2);
            data.add(t.train.back(), i % 2, 2);
        }
        for (int i = 0; i < 40; ++i) {
            t.test.push_back(corner_image(i % 2, rng));
            t.test_y.push_back(i % 2);
        }
        nn::CnnShape s;
        s.input_side = kSide;
        s.conv1 = 4;
        s.conv2 = 6;
        s.hidden = 16;
        s.classes = 2;
        nn::TrainConfig cfg;
        cfg.epochs = 10;
        cfg.lr = 0.02;
        t.model = nn::train_cnn(nn::TinyCnn::init(s, 22), data, cfg);
        return t;
    }();
    return t;
}

double l2(const Canvas& a, const Canvas& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

} // namespace

TEST_CASE("toy model is accurate")
{
    const auto& t = toy();
    CHECK(nn::accuracy(t.model, t.test, t.test_y) >= 0.95);
}

TEST_CASE("zero gradient leaves the image unchanged")
{
    nn::CnnShape s;
    s.input_side = kSide;
    s.classes = 2;
    const auto zero = nn::TinyCnn::zeros(s);
    std::mt19937_64 rng(1);
    const auto x = corner_image(0, rng);
    const auto a = fgsm(zero, x, 0, AttackConfig{});
    CHECK(a.perturbed == x);
    CHECK(a.l2 == 0.0);
}

TEST_CASE("every emitted image respects the L2 budget")
{
    const auto& t = toy();
    AttackConfig cfg;
    for (double eps : {10.0, 300.0, 3000.0}) {
        cfg.epsilon = eps;
        cfg.fgsm_step = 60.0;
        cfg.cw_steps = 10;
        for (std::size_t i = 0; i < 6; ++i) {
            for (const auto& a : {fgsm(t.model, t.test[i], t.test_y[i], cfg), cw_l2(t.model, t.test[i], t.test_y[i], cfg)}) {
                CHECK(a.l2 < eps);
                CHECK(l2(a.perturbed, a.base) < eps);
                CHECK(a.perturbed.size() == a.base.size());
                for (double v : a.perturbed)
                    CHECK((v >= 0.0 && v <= 255.0));
            }
        }
    }
}

TEST_CASE("large-epsilon FGSM fools the toy model")
{
    const auto& t = toy();
    AttackConfig cfg;
    cfg.epsilon = 1e6;
    cfg.fgsm_step = 200.0;
    std::size_t fooled = 0;
    for (std::size_t i = 0; i < t.test.size(); ++i)
        fooled += nn::predict(t.model, fgsm(t.model, t.test[i], t.test_y[i], cfg).perturbed) != t.test_y[i];
    CHECK(static_cast<double>(fooled) / static_cast<double>(t.test.size()) >= 0.8);
}

TEST_CASE("C&W succeeds wherever FGSM does, and more often")
{
    const auto& t = toy();
    AttackConfig cfg;
    cfg.epsilon = 900.0;
    cfg.fgsm_step = 60.0;
    cfg.cw_steps = 60;
    cfg.cw_lr = 8.0;
    cfg.cw_c = 0.01;
    std::size_t f_ok = 0, c_ok = 0, violations = 0;
    for (std::size_t i = 0; i < t.test.size(); ++i) {
        const bool f = nn::predict(t.model, fgsm(t.model, t.test[i], t.test_y[i], cfg).perturbed) != t.test_y[i];
        const bool c = nn::predict(t.model, cw_l2(t.model, t.test[i], t.test_y[i], cfg).perturbed) != t.test_y[i];
        f_ok += f;
        c_ok += c;
        violations += f && !c;
    }
    CHECK(violations == 0);
    CHECK(c_ok > f_ok);
}

TEST_CASE("dominant penalty returns the original image")
{
    const auto& t = toy();
    AttackConfig cfg;
    cfg.cw_c = 1e12;
    cfg.cw_steps = 20;
    const auto a = cw_l2(t.model, t.test[0], t.test_y[0], cfg);
    CHECK(a.l2 == 0.0);
}

TEST_CASE("targeted C&W lands on the target")
{
    const auto& t = toy();
    AttackConfig cfg;
    cfg.epsilon = 5000.0;
    cfg.cw_steps = 60;
    cfg.cw_c = 0.01;
    for (std::size_t i = 0; i < 10; ++i) {
        cfg.target_class = 1 - t.test_y[i];
        const auto a = cw_l2(t.model, t.test[i], t.test_y[i], cfg);
        if (a.l2 > 0.0)
            CHECK(nn::predict(t.model, a.perturbed) == *cfg.target_class);
    }
}

TEST_CASE("per-class noise")
{
    const auto& t = toy();
    AttackConfig cfg;
    cfg.epsilon = 3000.0;
    cfg.cw_steps = 30;
    cfg.noise_sigma = 0.0;
    // A single sample with no initial noise is exactly cw_l2.
    const Canvas one[1] = {t.test[0]};
    const auto d = per_class_noise(t.model, one, t.test_y[0], cfg);
    CHECK(d.size() == t.test[0].size());
    CHECK(apply_noise(t.test[0], d, cfg.epsilon).perturbed == cw_l2(t.model, t.test[0], t.test_y[0], cfg).perturbed);

    // Optimised on training members of class 0, applied to held-out ones.
    cfg.noise_sigma = 8.0;
    std::vector<Canvas> members;
    for (std::size_t i = 0; i < t.train.size() && members.size() < 12; ++i)
        if (t.train_y[i] == 0)
            members.push_back(t.train[i]);
    const auto delta = per_class_noise(t.model, members, 0, cfg);
    std::size_t held = 0, fooled = 0;
    for (std::size_t i = 0; i < t.test.size(); ++i)
        if (t.test_y[i] == 0) {
            ++held;
            fooled += nn::predict(t.model, apply_noise(t.test[i], delta, cfg.epsilon).perturbed) != 0;
        }
    CHECK(static_cast<double>(fooled) / static_cast<double>(held) >= 0.5);
    CHECK_THROWS_AS(per_class_noise(t.model, std::span<const Canvas>{}, 0, cfg), DataError);
}

TEST_CASE("mask confines the perturbation")
{
    const auto& t = toy();
    AttackConfig cfg;
    cfg.epsilon = 2000.0;
    const auto mask = byte_range_mask(0, 40, 16, 3, kSide);
    for (const auto& a : {fgsm(t.model, t.test[1], t.test_y[1], cfg, mask), cw_l2(t.model, t.test[1], t.test_y[1], cfg, mask)})
        for (std::size_t i = 0; i < a.noise.size(); ++i)
            if (mask[i] == 0.0)
                CHECK(a.noise[i] == 0.0);
}

TEST_CASE("canvas bytes read back")
{
    std::mt19937_64 rng(5);
    Bytes b(50);
    for (auto& x : b)
        x = static_cast<std::uint8_t>(rng());
    const auto img = bytes_to_image(b, WidthPolicy::fixed(8));
    const auto c = to_canvas(img, kSide);
    CHECK(canvas_to_bytes(c, 50, 8, img.height, kSide, {}) == b);
    // Past the payload the canvas holds padding zeros.
    const auto longer = canvas_to_bytes(c, 60, 8, img.height, kSide, {});
    CHECK(std::equal(b.begin(), b.end(), longer.begin()));
    CHECK(longer[55] == 0);
}

TEST_CASE("closed loop")
{
    nn::CnnShape s;
    s.input_side = kSide;
    s.classes = 3;
    const auto model = nn::TinyCnn::init(s, 31);
    LoopContext ctx;
    ctx.model = &model;
    ctx.policy = WidthPolicy::fixed(8);
    ctx.cfg.max_loops = 3;
    ctx.cfg.cw_steps = 5;

    std::mt19937_64 rng(32);
    progen::Shape shape;
    shape.max_statements = 8;
    const auto prog = progen::random_program(rng, shape);

    SUBCASE("already misclassified")
    {
        ctx.targets.push_back({"wrong", [](const Bytes&, const GrayImage&) { return 2; }});
        const auto r = closed_loop(ctx, prog, 0);
        CHECK(r.evaded);
        CHECK(r.loops == 0);
        CHECK(r.program.text == prog.text);
    }
    SUBCASE("output stays executable and equivalent")
    {
        ctx.targets.push_back({"stubborn", [](const Bytes&, const GrayImage&) { return 0; }});
        const auto r = closed_loop(ctx, prog, 0);
        CHECK_FALSE(r.evaded);
        CHECK(r.loops == 3);
        CHECK(r.records.size() == 3);
        CHECK(r.program.text.size() <= static_cast<std::size_t>(std::ceil(1.25 * prog.text.size())));
        const auto a = isa::execute(prog, isa::default_inputs());
        const auto b = isa::execute(r.program, isa::default_inputs());
        CHECK(isa::equivalent(a, b));
        CHECK(isa::disassemble(r.program.text).error_offset == std::nullopt);
    }
}
