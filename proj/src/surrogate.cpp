#include "amao/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include "json.hpp"

#include "amao/error.hpp"
#include "amao/isa.hpp"
#include "amao/kernels.hpp"

namespace amao::trees {

namespace {

std::uint32_t pack(const std::uint8_t* p)
{
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

void image_stats(const GrayImage& img, std::size_t row_means, std::vector<double>& out)
{
    const double n = static_cast<double>(img.pixels.size());
    double sum = 0.0, sq = 0.0;
    for (auto v : img.pixels) {
        sum += v;
        sq += static_cast<double>(v) * v;
    }
    const double mean = n > 0 ? sum / n : 0.0;
    out.push_back(mean);
    out.push_back(n > 0 ? sq / n - mean * mean : 0.0);
    for (std::size_t r = 0; r < row_means; ++r) {
        double rs = 0.0;
        if (r < img.height) {
            for (std::size_t c = 0; c < img.width; ++c)
                rs += img.at(r, c);
            rs /= static_cast<double>(img.width);
        }
        out.push_back(rs);
    }
}

std::vector<double> scores(const Surrogate& m, const std::vector<double>& x)
{
    std::vector<double> f = m.prior;
    for (const auto& s : m.stumps) {
        const auto& leaf = x[s.feature] <= s.threshold ? s.left : s.right;
        for (std::size_t k = 0; k < f.size(); ++k)
            f[k] += m.cfg.shrinkage * leaf[k];
    }
    return f;
}

} // namespace

std::size_t Surrogate::opcode_features() const
{
    return cfg.opcodes ? static_cast<std::size_t>(isa::Op::Emit) + 1 : 0;
}

std::vector<double> features(const Surrogate& m, ByteView bytes, const GrayImage& img)
{
    std::unordered_map<std::uint32_t, std::size_t> index;
    for (std::size_t i = 0; i < m.ngrams.size(); ++i)
        index.emplace(m.ngrams[i], i);
    std::vector<double> x(m.ngrams.size(), 0.0);
    for (std::size_t i = 0; i + 4 <= bytes.size(); ++i)
        if (auto it = index.find(pack(bytes.data() + i)); it != index.end())
            x[it->second] += 1.0;
    if (m.cfg.opcodes) {
        // Undecodable tails (an appended payload, say) just stop the sweep.
        x.resize(m.ngrams.size() + m.opcode_features(), 0.0);
        for (const auto& insn : isa::disassemble(bytes).instructions)
            x[m.ngrams.size() + static_cast<std::size_t>(insn.op)] += 1.0;
    }
    image_stats(img, m.cfg.row_means, x);
    return x;
}

Surrogate train_surrogate(std::span<const LabeledSample> data, const SurrogateConfig& cfg)
{
    if (data.empty())
        throw DataError("train_surrogate: empty training set");
    Surrogate m;
    m.cfg = cfg;

    std::map<std::uint32_t, std::uint64_t> freq;
    for (const auto& s : data)
        for (std::size_t i = 0; i + 4 <= s.bytes.size(); ++i)
            ++freq[pack(s.bytes.data() + i)];
    std::vector<std::pair<std::uint32_t, std::uint64_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    for (std::size_t i = 0; i < std::min(cfg.top_f, ranked.size()); ++i)
        m.ngrams.push_back(ranked[i].first);

    for (const auto& s : data)
        m.classes.push_back(s.label);
    std::sort(m.classes.begin(), m.classes.end());
    m.classes.erase(std::unique(m.classes.begin(), m.classes.end()), m.classes.end());
    const std::size_t K = m.classes.size();
    const std::size_t N = data.size();

    std::vector<std::size_t> y(N);
    std::vector<double> counts(K, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        y[i] = static_cast<std::size_t>(std::lower_bound(m.classes.begin(), m.classes.end(), data[i].label) -
                                        m.classes.begin());
        counts[y[i]] += 1.0;
    }
    for (std::size_t k = 0; k < K; ++k)
        m.prior.push_back(std::log(counts[k] / static_cast<double>(N)));
    if (K < 2)
        return m;

    // Feature-major matrix and per-feature sorted sample orders; neither
    // changes between rounds.
    const std::size_t F = m.feature_count();
    std::vector<std::vector<double>> col(F, std::vector<double>(N));
    for (std::size_t i = 0; i < N; ++i) {
        const auto x = features(m, data[i].bytes, data[i].image);
        for (std::size_t f = 0; f < F; ++f)
            col[f][i] = x[f];
    }
    std::vector<std::vector<std::uint32_t>> order(F, std::vector<std::uint32_t>(N));
    for (std::size_t f = 0; f < F; ++f) {
        std::iota(order[f].begin(), order[f].end(), 0u);
        std::stable_sort(order[f].begin(), order[f].end(),
                         [&](std::uint32_t a, std::uint32_t b) { return col[f][a] < col[f][b]; });
    }

    std::vector<std::vector<double>> score(N, m.prior);
    std::vector<double> resid(N * K), hess(N * K);
    struct Split {
        double gain = -1.0;
        std::size_t pos = 0;
    };
    std::vector<Split> best(F);

    for (std::size_t round = 0; round < cfg.rounds; ++round) {
        for (std::size_t i = 0; i < N; ++i) {
            const auto p = nn::softmax(score[i]);
            for (std::size_t k = 0; k < K; ++k) {
                const double r = (y[i] == k ? 1.0 : 0.0) - p[k];
                resid[i * K + k] = r;
                hess[i * K + k] = std::abs(r) * (1.0 - std::abs(r));
            }
        }
        std::vector<double> total(K, 0.0);
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t k = 0; k < K; ++k)
                total[k] += resid[i * K + k];

        const auto nf = static_cast<std::ptrdiff_t>(F);
#pragma omp parallel for schedule(dynamic, 8)
        for (std::ptrdiff_t f = 0; f < nf; ++f) {
            const auto& ord = order[f];
            const auto& v = col[f];
            std::vector<double> left(K, 0.0);
            Split s;
            for (std::size_t pos = 0; pos + 1 < N; ++pos) {
                for (std::size_t k = 0; k < K; ++k)
                    left[k] += resid[ord[pos] * K + k];
                if (v[ord[pos]] == v[ord[pos + 1]])
                    continue;
                const double nl = static_cast<double>(pos + 1), nr = static_cast<double>(N - pos - 1);
                double gain = 0.0;
                for (std::size_t k = 0; k < K; ++k) {
                    const double r = total[k] - left[k];
                    gain += left[k] * left[k] / nl + r * r / nr;
                }
                if (gain > s.gain) {
                    s.gain = gain;
                    s.pos = pos;
                }
            }
            best[f] = s;
        }
        std::size_t bf = 0;
        for (std::size_t f = 1; f < F; ++f)
            if (best[f].gain > best[bf].gain)
                bf = f;
        if (best[bf].gain < 0.0)
            break; // every feature is constant

        Stump st;
        st.feature = static_cast<std::uint32_t>(bf);
        const auto& ord = order[bf];
        st.threshold = 0.5 * (col[bf][ord[best[bf].pos]] + col[bf][ord[best[bf].pos + 1]]);
        std::vector<double> gl(K, 0.0), hl(K, 0.0), gr(K, 0.0), hr(K, 0.0);
        for (std::size_t i = 0; i < N; ++i) {
            const bool l = col[bf][i] <= st.threshold;
            for (std::size_t k = 0; k < K; ++k) {
                (l ? gl : gr)[k] += resid[i * K + k];
                (l ? hl : hr)[k] += hess[i * K + k];
            }
        }
        const double scale = static_cast<double>(K - 1) / static_cast<double>(K);
        const auto leaf = [&](double g, double h) { return h > 1e-12 ? std::clamp(scale * g / h, -8.0, 8.0) : 0.0; };
        st.left.resize(K);
        st.right.resize(K);
        for (std::size_t k = 0; k < K; ++k) {
            st.left[k] = leaf(gl[k], hl[k]);
            st.right[k] = leaf(gr[k], hr[k]);
        }
        for (std::size_t i = 0; i < N; ++i) {
            const auto& lv = col[bf][i] <= st.threshold ? st.left : st.right;
            for (std::size_t k = 0; k < K; ++k)
                score[i][k] += cfg.shrinkage * lv[k];
        }
        m.stumps.push_back(std::move(st));
    }
    return m;
}

Prediction predict(const Surrogate& m, ByteView bytes, const GrayImage& img)
{
    Prediction p;
    p.probs = nn::softmax(scores(m, features(m, bytes, img)));
    p.label = m.classes[static_cast<std::size_t>(std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin())];
    return p;
}

double accuracy(const Surrogate& m, std::span<const LabeledSample> data)
{
    if (data.empty())
        return 0.0;
    std::size_t hit = 0;
    for (const auto& s : data) {
        if (!std::binary_search(m.classes.begin(), m.classes.end(), s.label))
            throw DataError("surrogate: class " + std::to_string(s.label) + " was not seen in training");
        hit += predict(m, s.bytes, s.image).label == s.label;
    }
    return static_cast<double>(hit) / static_cast<double>(data.size());
}

void save_surrogate(const Surrogate& m, std::ostream& out)
{
    nlohmann::json j;
    j["format"] = "amao-surrogate";
    j["version"] = 1;
    j["top_f"] = m.cfg.top_f;
    j["rounds"] = m.cfg.rounds;
    j["row_means"] = m.cfg.row_means;
    j["opcodes"] = m.cfg.opcodes;
    j["shrinkage"] = m.cfg.shrinkage;
    j["ngrams"] = m.ngrams;
    j["classes"] = m.classes;
    j["prior"] = m.prior;
    auto& st = j["stumps"] = nlohmann::json::array();
    for (const auto& s : m.stumps)
        st.push_back({{"feature", s.feature}, {"threshold", s.threshold}, {"left", s.left}, {"right", s.right}});
    out << j.dump() << '\n';
}

Surrogate load_surrogate(std::istream& in)
{
    try {
        const auto j = nlohmann::json::parse(in);
        if (j.at("format") != "amao-surrogate" || j.at("version") != 1)
            throw DataError("surrogate checkpoint: unknown format");
        Surrogate m;
        m.cfg.top_f = j.at("top_f");
        m.cfg.rounds = j.at("rounds");
        m.cfg.row_means = j.at("row_means");
        m.cfg.opcodes = j.value("opcodes", false);
        m.cfg.shrinkage = j.at("shrinkage");
        m.ngrams = j.at("ngrams").get<std::vector<std::uint32_t>>();
        m.classes = j.at("classes").get<std::vector<int>>();
        m.prior = j.at("prior").get<std::vector<double>>();
        for (const auto& s : j.at("stumps"))
            m.stumps.push_back({s.at("feature"), s.at("threshold"), s.at("left").get<std::vector<double>>(),
                                s.at("right").get<std::vector<double>>()});
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("surrogate checkpoint: ") + e.what());
    }
}

} // namespace amao::trees
