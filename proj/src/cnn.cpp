#include "amao/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "amao/error.hpp"

namespace amao::nn {

void CnnShape::validate() const
{
    if (classes < 1 || conv1 < 1 || conv2 < 1 || hidden < 1)
        throw DataError("cnn: layer sizes must be positive");
    if (input_side < kernel || pool1() < kernel || pool2() < 1)
        throw DataError("cnn: input_side " + std::to_string(input_side) + " too small for two conv/pool blocks");
    if (!(dropout >= 0.0 && dropout < 1.0))
        throw DataError("cnn: dropout must be in [0, 1)");
}

std::array<std::vector<double>*, 8> TinyCnn::tensors() { return {&w1, &b1, &w2, &b2, &w3, &b3, &w4, &b4}; }

std::array<const std::vector<double>*, 8> TinyCnn::tensors() const
{
    return {&w1, &b1, &w2, &b2, &w3, &b3, &w4, &b4};
}

std::size_t TinyCnn::parameter_count() const
{
    std::size_t n = 0;
    for (const auto* t : tensors())
        n += t->size();
    return n;
}

TinyCnn TinyCnn::zeros(const CnnShape& shape)
{
    shape.validate();
    const std::size_t k2 = CnnShape::kernel * CnnShape::kernel;
    TinyCnn m;
    m.shape = shape;
    m.w1.assign(shape.conv1 * k2, 0.0);
    m.b1.assign(shape.conv1, 0.0);
    m.w2.assign(shape.conv2 * shape.conv1 * k2, 0.0);
    m.b2.assign(shape.conv2, 0.0);
    m.w3.assign(shape.hidden * shape.flat(), 0.0);
    m.b3.assign(shape.hidden, 0.0);
    m.w4.assign(shape.classes * shape.hidden, 0.0);
    m.b4.assign(shape.classes, 0.0);
    return m;
}

TinyCnn TinyCnn::init(const CnnShape& shape, std::uint64_t seed)
{
    TinyCnn m = zeros(shape);
    std::mt19937_64 rng(seed);
    const auto fill = [&](std::vector<double>& w, std::size_t fan_in) {
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-a, a);
        for (auto& v : w)
            v = u(rng);
    };
    const std::size_t k2 = CnnShape::kernel * CnnShape::kernel;
    fill(m.w1, k2);
    fill(m.w2, shape.conv1 * k2);
    fill(m.w3, shape.flat());
    fill(m.w4, shape.hidden);
    return m;
}

namespace {

struct Forward {
    std::vector<double> x, a1, p1, a2, p2, h, hd, keep, z;
    std::vector<std::size_t> i1, i2;
};

ConvShape conv1_shape(const CnnShape& s) { return {1, s.conv1, s.input_side, s.input_side, CnnShape::kernel}; }
ConvShape conv2_shape(const CnnShape& s) { return {s.conv1, s.conv2, s.pool1(), s.pool1(), CnnShape::kernel}; }

// `rng` non-null enables inverted dropout on the hidden layer.
Forward forward(const TinyCnn& m, const Canvas& input, std::mt19937_64* rng)
{
    const auto& s = m.shape;
    if (input.size() != s.input_side * s.input_side)
        throw DataError("cnn: canvas has " + std::to_string(input.size()) + " cells, expected " +
                        std::to_string(s.input_side * s.input_side));
    Forward f;
    f.x.resize(input.size());
    for (std::size_t i = 0; i < input.size(); ++i)
        f.x[i] = input[i] / 255.0;

    const auto c1 = conv1_shape(s);
    f.a1.resize(s.conv1 * s.side1() * s.side1());
    conv_forward(c1, f.x, m.w1, m.b1, f.a1);
    relu_inplace(f.a1);
    f.p1.resize(s.conv1 * s.pool1() * s.pool1());
    f.i1.resize(f.p1.size());
    maxpool_forward(s.conv1, s.side1(), s.side1(), f.a1, f.p1, f.i1);

    const auto c2 = conv2_shape(s);
    f.a2.resize(s.conv2 * s.side2() * s.side2());
    conv_forward(c2, f.p1, m.w2, m.b2, f.a2);
    relu_inplace(f.a2);
    f.p2.resize(s.flat());
    f.i2.resize(f.p2.size());
    maxpool_forward(s.conv2, s.side2(), s.side2(), f.a2, f.p2, f.i2);

    f.h.resize(s.hidden);
    dense_forward(s.flat(), s.hidden, f.p2, m.w3, m.b3, f.h);
    relu_inplace(f.h);
    f.hd = f.h;
    if (rng && s.dropout > 0.0) {
        std::bernoulli_distribution keep(1.0 - s.dropout);
        f.keep.resize(s.hidden);
        for (std::size_t i = 0; i < s.hidden; ++i) {
            f.keep[i] = keep(*rng) ? 1.0 / (1.0 - s.dropout) : 0.0;
            f.hd[i] *= f.keep[i];
        }
    }
    f.z.resize(s.classes);
    dense_forward(s.hidden, s.classes, f.hd, m.w4, m.b4, f.z);
    return f;
}

// Backpropagates dz. Parameter gradients are accumulated into `g` when it is
// non-null; the input gradient (per pixel unit) is returned when requested.
Canvas backward(const TinyCnn& m, const Forward& f, std::span<const double> dz, TinyCnn* g, bool want_input)
{
    const auto& s = m.shape;
    const auto gw = [&](std::vector<double> TinyCnn::*t) -> std::span<double> {
        return g ? std::span<double>(g->*t) : std::span<double>();
    };
    std::vector<double> dh(s.hidden);
    dense_backward(s.hidden, s.classes, f.hd, m.w4, dz, dh, gw(&TinyCnn::w4), gw(&TinyCnn::b4));
    if (!f.keep.empty())
        for (std::size_t i = 0; i < s.hidden; ++i)
            dh[i] *= f.keep[i];
    relu_backward(f.h, dh);

    std::vector<double> dp2(s.flat());
    dense_backward(s.flat(), s.hidden, f.p2, m.w3, dh, dp2, gw(&TinyCnn::w3), gw(&TinyCnn::b3));
    std::vector<double> da2(f.a2.size());
    maxpool_backward(dp2, f.i2, da2);
    relu_backward(f.a2, da2);

    std::vector<double> dp1(f.p1.size());
    conv_backward(conv2_shape(s), f.p1, m.w2, da2, dp1, gw(&TinyCnn::w2), gw(&TinyCnn::b2));
    std::vector<double> da1(f.a1.size());
    maxpool_backward(dp1, f.i1, da1);
    relu_backward(f.a1, da1);

    Canvas dx;
    if (want_input)
        dx.resize(f.x.size());
    conv_backward(conv1_shape(s), f.x, m.w1, da1, dx, gw(&TinyCnn::w1), gw(&TinyCnn::b1));
    for (auto& v : dx)
        v /= 255.0;
    return dx;
}

} // namespace

std::vector<double> logits(const TinyCnn& m, const Canvas& x) { return forward(m, x, nullptr).z; }

std::vector<double> probabilities(const TinyCnn& m, const Canvas& x, double temperature)
{
    return softmax(logits(m, x), temperature);
}

int predict(const TinyCnn& m, const Canvas& x)
{
    const auto z = logits(m, x);
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

Canvas input_gradient(const TinyCnn& m, const Canvas& x, std::span<const double> dlogits)
{
    return backward(m, forward(m, x, nullptr), dlogits, nullptr, true);
}

double cross_entropy(const TinyCnn& m, const Canvas& x, int label)
{
    const auto p = probabilities(m, x);
    return -std::log(std::max(p.at(static_cast<std::size_t>(label)), 1e-300));
}

Canvas grad_input(const TinyCnn& m, const Canvas& x, int label)
{
    const auto f = forward(m, x, nullptr);
    auto dz = softmax(f.z);
    dz.at(static_cast<std::size_t>(label)) -= 1.0;
    return backward(m, f, dz, nullptr, true);
}

void TrainingSet::add(Canvas x, int label, std::size_t classes)
{
    std::vector<double> t(classes, 0.0);
    t.at(static_cast<std::size_t>(label)) = 1.0;
    add_soft(std::move(x), std::move(t));
}

void TrainingSet::add_soft(Canvas x, std::vector<double> target)
{
    inputs.push_back(std::move(x));
    targets.push_back(std::move(target));
}

TinyCnn train_cnn(TinyCnn model, const TrainingSet& data, const TrainConfig& cfg, const EpochHook& hook)
{
    if (data.size() == 0)
        throw DataError("train_cnn: empty training set");
    for (const auto& t : data.targets)
        if (t.size() != model.shape.classes)
            throw DataError("train_cnn: target width does not match class count");
    if (cfg.batch == 0 || !(cfg.lr > 0.0) || !(cfg.temperature > 0.0))
        throw DataError("train_cnn: batch, lr and temperature must be positive");
    if (!(cfg.final_lr_fraction > 0.0 && cfg.final_lr_fraction <= 1.0))
        throw DataError("train_cnn: final_lr_fraction must be in (0, 1]");

    // At temperature T the output layer is optimised in units of T: it is
    // divided by T here and multiplied back on the way out. Plain SGD on
    // softmax(z/T) otherwise needs T times larger output weights and crawls
    // (val 0.47 after 16 epochs at T=20), while scaling the gradient up
    // instead diverges.
    const double T = cfg.temperature;
    const auto rescaled = [T](TinyCnn m) {
        scale_logits(m, T);
        return m;
    };
    if (T != 1.0)
        scale_logits(model, 1.0 / T);

    std::mt19937_64 rng(cfg.seed);
    TinyCnn velocity = TinyCnn::zeros(model.shape);
    TinyCnn grad = TinyCnn::zeros(model.shape);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        const double frac = cfg.epochs > 1 ? static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1) : 0.0;
        const double lr = cfg.lr * (1.0 - (1.0 - cfg.final_lr_fraction) * frac);
        EpochStats stats;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            for (auto* t : grad.tensors())
                std::fill(t->begin(), t->end(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t b = start; b < end; ++b) {
                const auto& x = data.inputs[order[b]];
                const auto& target = data.targets[order[b]];
                const auto f = forward(model, x, &rng);
                const auto p = softmax(f.z);
                std::vector<double> dz(p.size());
                for (std::size_t j = 0; j < p.size(); ++j) {
                    if (target[j] > 0.0)
                        batch_loss -= target[j] * std::log(std::max(p[j], 1e-300));
                    dz[j] = p[j] - target[j];
                }
                const auto zi = std::max_element(f.z.begin(), f.z.end()) - f.z.begin();
                const auto ti = std::max_element(target.begin(), target.end()) - target.begin();
                correct += zi == ti;
                backward(model, f, dz, &grad, false);
            }
            if (!std::isfinite(batch_loss)) {
                std::ostringstream msg;
                msg << "train_cnn: non-finite loss at epoch " << epoch << ", batch starting at " << start
                    << " (lr=" << cfg.lr << ")";
                throw Error(msg.str());
            }
            stats.loss += batch_loss;
            const double scale = lr / static_cast<double>(end - start);
            auto ps = model.tensors();
            auto vs = velocity.tensors();
            auto gs = grad.tensors();
            for (std::size_t t = 0; t < ps.size(); ++t)
                for (std::size_t i = 0; i < ps[t]->size(); ++i) {
                    double& v = (*vs[t])[i];
                    v = cfg.momentum * v - scale * (*gs[t])[i];
                    (*ps[t])[i] += v;
                }
        }
        stats.loss /= static_cast<double>(data.size());
        stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
        if (hook && hook(epoch, T != 1.0 ? rescaled(model) : model, stats))
            break;
    }
    return T != 1.0 ? rescaled(std::move(model)) : model;
}

void scale_logits(TinyCnn& m, double s)
{
    for (auto& w : m.w4)
        w *= s;
    for (auto& b : m.b4)
        b *= s;
}

double accuracy(const TinyCnn& m, std::span<const Canvas> inputs, std::span<const int> labels)
{
    if (inputs.empty())
        return 0.0;
    std::vector<int> hit(inputs.size(), 0);
    const auto n = static_cast<std::ptrdiff_t>(inputs.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        hit[i] = predict(m, inputs[i]) == labels[i];
    return static_cast<double>(std::accumulate(hit.begin(), hit.end(), 0)) / static_cast<double>(inputs.size());
}

namespace {

constexpr char kMagic[8] = {'A', 'M', 'A', 'O', 'C', 'N', 'N', '\0'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, const T& v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in)
{
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in)
        throw DataError("cnn checkpoint: truncated file");
    return v;
}

} // namespace

void save_cnn(const TinyCnn& m, std::ostream& out)
{
    out.write(kMagic, sizeof kMagic);
    put(out, kVersion);
    for (std::uint64_t v : {m.shape.input_side, m.shape.conv1, m.shape.conv2, m.shape.hidden, m.shape.classes})
        put(out, v);
    put(out, m.shape.dropout);
    for (const auto* t : m.tensors()) {
        put(out, static_cast<std::uint64_t>(t->size()));
        out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
}

TinyCnn load_cnn(std::istream& in)
{
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw DataError("cnn checkpoint: bad magic");
    if (const auto v = get<std::uint32_t>(in); v != kVersion)
        throw DataError("cnn checkpoint: unsupported version " + std::to_string(v));
    CnnShape s;
    s.input_side = get<std::uint64_t>(in);
    s.conv1 = get<std::uint64_t>(in);
    s.conv2 = get<std::uint64_t>(in);
    s.hidden = get<std::uint64_t>(in);
    s.classes = get<std::uint64_t>(in);
    s.dropout = get<double>(in);
    TinyCnn m = TinyCnn::zeros(s);
    for (auto* t : m.tensors()) {
        if (get<std::uint64_t>(in) != t->size())
            throw DataError("cnn checkpoint: tensor size mismatch");
        in.read(reinterpret_cast<char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
        if (!in)
            throw DataError("cnn checkpoint: truncated file");
    }
    return m;
}

void save_cnn(const TinyCnn& m, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write " + path);
    save_cnn(m, out);
}

TinyCnn load_cnn(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open model checkpoint " + path);
    return load_cnn(in);
}

} // namespace amao::nn
