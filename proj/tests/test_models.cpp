#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "amao/cnn.hpp"
#include "amao/kernels.hpp"
#include "amao/surrogate.hpp"
#include "oracles.hpp"

using namespace amao;
using namespace amao::nn;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng)
{
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v)
        x = d(rng);
    return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Two classes told apart by which corner is bright.
Canvas corner_image(int label, std::size_t side, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> noise(0.0, 40.0);
    Canvas c(side * side);
    for (auto& v : c)
        v = noise(rng);
    const std::size_t off = label == 0 ? 0 : side / 2;
    for (std::size_t r = off; r < off + side / 2; ++r)
        for (std::size_t col = off; col < off + side / 2; ++col)
            c[r * side + col] = 200.0 + noise(rng);
    return c;
}

CnnShape small_shape(std::size_t classes)
{
    CnnShape s;
    s.input_side = 16;
    s.conv1 = 4;
    s.conv2 = 6;
    s.hidden = 16;
    s.classes = classes;
    return s;
}

} // namespace

TEST_CASE("parallel kernels agree with serial references")
{
    std::mt19937_64 rng(1);
    const ConvShape s{3, 5, 13, 11, 5};
    const auto in = random_vec(s.cin * s.h * s.w, rng);
    const auto w = random_vec(s.cout * s.cin * s.k * s.k, rng);
    const auto b = random_vec(s.cout, rng);
    std::vector<double> o1(s.cout * s.oh() * s.ow()), o2(o1.size());
    conv_forward(s, in, w, b, o1);
    conv_forward_serial(s, in, w, b, o2);
    CHECK(max_abs_diff(o1, o2) < 1e-12);

    const auto go = random_vec(o1.size(), rng);
    std::vector<double> gi1(in.size()), gi2(in.size()), gw1(w.size(), 0.0), gw2(w.size(), 0.0), gb1(b.size(), 0.0),
        gb2(b.size(), 0.0);
    conv_backward(s, in, w, go, gi1, gw1, gb1);
    conv_backward_serial(s, in, w, go, gi2, gw2, gb2);
    CHECK(max_abs_diff(gi1, gi2) < 1e-12);
    CHECK(max_abs_diff(gw1, gw2) < 1e-11);
    CHECK(max_abs_diff(gb1, gb2) < 1e-12);

    const auto x = random_vec(37, rng);
    const auto dw = random_vec(37 * 9, rng);
    const auto db = random_vec(9, rng);
    std::vector<double> d1(9), d2(9);
    dense_forward(37, 9, x, dw, db, d1);
    dense_forward_serial(37, 9, x, dw, db, d2);
    CHECK(max_abs_diff(d1, d2) < 1e-12);
}

TEST_CASE("max pool routes gradient to the winner")
{
    const std::vector<double> in{1, 5, 2, 0, 3, 4, 9, 1, 0, 0, 0, 0, 0, 0, 0, 7};
    std::vector<double> out(4);
    std::vector<std::size_t> arg(4);
    maxpool_forward(1, 4, 4, in, out, arg);
    CHECK(out == std::vector<double>{5, 9, 0, 7});
    std::vector<double> g(16);
    maxpool_backward(std::vector<double>{1, 2, 3, 4}, arg, g);
    CHECK(g[1] == 1);
    CHECK(g[6] == 2);
    CHECK(g[15] == 4);
    CHECK(std::accumulate(g.begin(), g.end(), 0.0) == 10);
}

TEST_CASE("softmax is a distribution")
{
    for (double t : {0.5, 1.0, 20.0}) {
        const auto p = softmax(std::vector<double>{3.0, -1.0, 1000.0, 2.0}, t);
        CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-12);
        for (double v : p)
            CHECK(v >= 0.0);
    }
}

TEST_CASE("input gradient matches central differences")
{
    std::mt19937_64 rng(11);
    CnnShape shape;
    shape.classes = 4;
    for (int t = 0; t < 3; ++t) {
        const auto m = TinyCnn::init(shape, 100 + t);
        const auto x = oracle::random_canvas(shape.input_side, rng);
        const auto r = oracle::finite_difference_check(m, x, t % 4, 100, rng);
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("gradient shape and zero model")
{
    CnnShape shape;
    shape.classes = 3;
    const auto zero = TinyCnn::zeros(shape);
    std::mt19937_64 rng(2);
    const auto x = oracle::random_canvas(shape.input_side, rng);
    const auto g = grad_input(zero, x, 1);
    CHECK(g.size() == x.size());
    CHECK(std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; }));
    const auto p = probabilities(zero, x);
    CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-6);
}

TEST_CASE("inference is deterministic")
{
    CnnShape shape;
    shape.classes = 5;
    const auto m = TinyCnn::init(shape, 3);
    std::mt19937_64 rng(3);
    const auto x = oracle::random_canvas(shape.input_side, rng);
    CHECK(logits(m, x) == logits(m, x));
}

TEST_CASE("bytes outside the crop window cannot change logits")
{
    CnnShape shape;
    shape.input_side = 16;
    shape.classes = 3;
    const auto m = TinyCnn::init(shape, 4);
    // 20 x 20 image: rows/cols 0-1 and 18-19 are cropped away.
    Bytes data(400);
    std::mt19937_64 rng(4);
    for (auto& b : data)
        b = static_cast<std::uint8_t>(rng());
    const auto policy = WidthPolicy::fixed(20);
    const auto base = logits(m, to_canvas(bytes_to_image(data, policy), 16));
    auto mutated = data;
    for (std::size_t r = 0; r < 20; ++r)
        for (std::size_t c = 0; c < 20; ++c)
            if (r < 2 || r >= 18 || c < 2 || c >= 18)
                mutated[r * 20 + c] ^= 0xFF;
    CHECK(logits(m, to_canvas(bytes_to_image(mutated, policy), 16)) == base);
    mutated[5 * 20 + 5] ^= 0xFF;
    CHECK(logits(m, to_canvas(bytes_to_image(mutated, policy), 16)) != base);
}

TEST_CASE("small image is padded bottom-right")
{
    const auto img = bytes_to_image(Bytes{1, 2, 3, 4, 5}, WidthPolicy::fixed(2));
    const auto c = to_canvas(img, 4);
    CHECK(c == Canvas{1, 2, 0, 0, 3, 4, 0, 0, 5, 0, 0, 0, 0, 0, 0, 0});
    const auto mask = byte_range_mask(3, 5, 2, 3, 4);
    CHECK(mask == std::vector<double>{0, 0, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0});
}

TEST_CASE("separable toy images are learned")
{
    std::mt19937_64 rng(5);
    const auto shape = small_shape(2);
    TrainingSet train;
    std::vector<Canvas> val;
    std::vector<int> val_y;
    for (int i = 0; i < 120; ++i)
        train.add(corner_image(i % 2, 16, rng), i % 2, 2);
    for (int i = 0; i < 100; ++i) {
        val.push_back(corner_image(i % 2, 16, rng));
        val_y.push_back(i % 2);
    }
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.lr = 0.02;
    const auto m = train_cnn(TinyCnn::init(shape, 6), train, cfg);
    CHECK(accuracy(m, val, val_y) >= 0.99);

    // Same seed, same model.
    const auto again = train_cnn(TinyCnn::init(shape, 6), train, cfg);
    CHECK(again.w3 == m.w3);
}

TEST_CASE("training at temperature T scales the T=1 solution by T")
{
    std::mt19937_64 rng(11);
    const auto shape = small_shape(2);
    TrainingSet train;
    for (int i = 0; i < 60; ++i)
        train.add(corner_image(i % 2, 16, rng), i % 2, 2);
    TrainConfig cfg;
    cfg.epochs = 3;
    const auto plain = train_cnn(TinyCnn::init(shape, 3), train, cfg);
    for (const double T : {2.0, 20.0}) {
        auto init = TinyCnn::init(shape, 3);
        scale_logits(init, T);
        cfg.temperature = T;
        const auto hot = train_cnn(init, train, cfg);
        const auto x = corner_image(1, 16, rng);
        auto expect = logits(plain, x);
        for (auto& z : expect)
            z *= T;
        CHECK(max_abs_diff(logits(hot, x), expect) <= 1e-8 * T);
        CHECK(max_abs_diff(hot.w1, plain.w1) <= 1e-9);
    }
}

TEST_CASE("shuffled labels give chance accuracy")
{
    std::mt19937_64 rng(7);
    const auto shape = small_shape(2);
    TrainingSet train;
    for (int i = 0; i < 200; ++i)
        train.add(oracle::random_canvas(16, rng), static_cast<int>(rng() % 2), 2);
    std::vector<Canvas> test;
    std::vector<int> test_y;
    for (int i = 0; i < 400; ++i) {
        test.push_back(oracle::random_canvas(16, rng));
        test_y.push_back(static_cast<int>(rng() % 2));
    }
    TrainConfig cfg;
    cfg.epochs = 8;
    const auto m = train_cnn(TinyCnn::init(shape, 8), train, cfg);
    CHECK(std::abs(accuracy(m, test, test_y) - 0.5) <= 0.10);
}

TEST_CASE("non-finite loss aborts training")
{
    const auto shape = small_shape(2);
    TrainingSet data;
    Canvas bad(16 * 16, 1.0);
    bad[7] = std::nan("");
    data.add(bad, 0, 2);
    CHECK_THROWS_AS(train_cnn(TinyCnn::init(shape, 1), data, TrainConfig{}), amao::Error);
}

TEST_CASE("checkpoint round trip")
{
    CnnShape shape;
    shape.classes = 3;
    const auto m = TinyCnn::init(shape, 9);
    std::stringstream ss;
    save_cnn(m, ss);
    const auto back = load_cnn(ss);
    CHECK(back.shape == m.shape);
    CHECK(back.w1 == m.w1);
    CHECK(back.b4 == m.b4);
    std::stringstream junk("not a model");
    CHECK_THROWS_AS(load_cnn(junk), DataError);
}

namespace {

LabeledSample byte_sample(int label, std::mt19937_64& rng)
{
    Bytes b(64 + rng() % 64);
    for (auto& x : b)
        x = static_cast<std::uint8_t>(rng() % 16);
    // Class signature: a repeated 4-byte motif.
    const std::uint8_t motif = static_cast<std::uint8_t>(0xA0 + label);
    for (int r = 0; r < 3; ++r) {
        const std::size_t at = rng() % (b.size() - 4);
        for (std::size_t i = 0; i < 4; ++i)
            b[at + i] = motif;
    }
    return make_sample("s", b, label, "test", WidthPolicy::fixed(16));
}

} // namespace

TEST_CASE("surrogate learns motif classes")
{
    std::mt19937_64 rng(12);
    std::vector<LabeledSample> train, test;
    for (int i = 0; i < 150; ++i)
        train.push_back(byte_sample(i % 3, rng));
    for (int i = 0; i < 90; ++i)
        test.push_back(byte_sample(i % 3, rng));
    trees::SurrogateConfig cfg;
    cfg.rounds = 60;
    const auto m = trees::train_surrogate(train, cfg);
    CHECK(m.classes == std::vector<int>{0, 1, 2});
    CHECK(trees::accuracy(m, test) >= 0.95);
    for (const auto& s : test) {
        const auto p = trees::predict(m, s.bytes, s.image);
        CHECK(std::abs(std::accumulate(p.probs.begin(), p.probs.end(), 0.0) - 1.0) < 1e-9);
    }

    std::stringstream ss;
    trees::save_surrogate(m, ss);
    const auto back = trees::load_surrogate(ss);
    for (const auto& s : test)
        CHECK(trees::predict(back, s.bytes, s.image).probs == trees::predict(m, s.bytes, s.image).probs);

    auto alien = test[0];
    alien.label = 7;
    CHECK_THROWS_AS(trees::accuracy(m, std::vector<LabeledSample>{alien}), DataError);
}

TEST_CASE("single-class surrogate always predicts that class")
{
    std::mt19937_64 rng(13);
    std::vector<LabeledSample> train;
    for (int i = 0; i < 20; ++i) {
        train.push_back(byte_sample(0, rng));
        train.back().label = 4;
    }
    const auto m = trees::train_surrogate(train);
    CHECK(m.stumps.empty());
    for (int i = 0; i < 10; ++i) {
        const auto s = byte_sample(i % 3, rng);
        CHECK(trees::predict(m, s.bytes, s.image).label == 4);
    }
}
