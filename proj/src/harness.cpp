#include "amao/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "amao/baselines.hpp"
#include "amao/corpus.hpp"
#include "amao/error.hpp"
#include "amao/heuristics.hpp"

namespace amao::harness {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Config

namespace {

std::string format_double(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

template <class T>
T parse_number(const std::string& key, const std::string& s)
{
    T v{};
    const char* end = s.data() + s.size();
    const auto r = std::from_chars(s.data(), end, v);
    if (r.ec != std::errc{} || r.ptr != end)
        throw DataError("config: bad value for " + key + ": '" + s + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& s)
{
    if (s == "true" || s == "1" || s == "on" || s == "yes")
        return true;
    if (s == "false" || s == "0" || s == "off" || s == "no")
        return false;
    throw DataError("config: bad value for " + key + ": '" + s + "'");
}

struct Field {
    std::string key;
    std::string help;
    std::function<std::string(const Config&)> get;
    std::function<void(Config&, const std::string&)> set;
};

template <class T>
Field field(std::string key, std::string help, T Config::*member)
{
    Field f{std::move(key), std::move(help), {}, {}};
    const std::string k = f.key;
    if constexpr (std::is_same_v<T, std::string>) {
        f.get = [member](const Config& c) { return c.*member; };
        f.set = [member](Config& c, const std::string& v) { c.*member = v; };
    } else if constexpr (std::is_same_v<T, bool>) {
        f.get = [member](const Config& c) { return std::string(c.*member ? "true" : "false"); };
        f.set = [member, k](Config& c, const std::string& v) { c.*member = parse_bool(k, v); };
    } else if constexpr (std::is_floating_point_v<T>) {
        f.get = [member](const Config& c) { return format_double(c.*member); };
        f.set = [member, k](Config& c, const std::string& v) { c.*member = parse_number<T>(k, v); };
    } else {
        f.get = [member](const Config& c) { return std::to_string(c.*member); };
        f.set = [member, k](Config& c, const std::string& v) { c.*member = parse_number<T>(k, v); };
    }
    return f;
}

const std::vector<Field>& fields()
{
    static const std::vector<Field> f = {
        field("seed", "master seed for corpus, models, attacks and baselines", &Config::seed),
        field("per_class", "synthetic samples per class", &Config::per_class),
        field("attack_per_class", "test samples attacked per class", &Config::attack_per_class),
        field("adv_per_class", "train samples attacked per class for adversarial training", &Config::adv_per_class),
        field("random_seeds", "seeds of the random-insertion baseline", &Config::random_seeds),
        field("growth", "size budget: obfuscated length <= ceil(growth * length)", &Config::growth),
        field("substitute_p", "rewrite probability of instruction substitution", &Config::substitute_p),
        field("cnn.epochs", "CNN training epochs", &Config::epochs),
        field("cnn.lr", "CNN initial learning rate", &Config::lr),
        field("cnn.final_lr_fraction", "learning rate at the last epoch, relative to cnn.lr", &Config::final_lr_fraction),
        field("cnn.batch", "CNN mini-batch size", &Config::batch),
        field("cnn.momentum", "SGD momentum", &Config::momentum),
        field("cnn.conv1", "channels of the first convolution", &Config::conv1),
        field("cnn.conv2", "channels of the second convolution", &Config::conv2),
        field("cnn.hidden", "units of the hidden dense layer", &Config::hidden),
        field("cnn.dropout", "dropout rate before the output layer", &Config::dropout),
        field("surrogate.top_f", "4-gram vocabulary size of the surrogate", &Config::surrogate_top_f),
        field("surrogate.rounds", "boosting rounds of the surrogate", &Config::surrogate_rounds),
        field("attack.epsilon", "L2 budget of the image perturbation (pixel units)", &Config::epsilon),
        field("attack.cw_c", "C&W perturbation weight", &Config::cw_c),
        field("attack.cw_steps", "C&W optimisation steps", &Config::cw_steps),
        field("attack.cw_lr", "C&W Adam step size (pixel units)", &Config::cw_lr),
        field("attack.kappa", "C&W logit margin", &Config::kappa),
        field("attack.max_loops", "closed-loop iteration cap", &Config::max_loops),
        field("attack.escalation", "kappa multiplier per closed-loop iteration", &Config::escalation),
        field("attack.restarts", "C&W targets realised per closed-loop iteration", &Config::restarts),
        field("attack.metric", "alignment metric: bit, byte_l0 or pixel_l2", &Config::metric),
        field("attack.compare_metric", "second metric for the metric comparison, or none", &Config::compare_metric),
        field("defense.enabled", "run the defense matrix", &Config::defenses),
        field("defense.mix_ratio", "adversarial samples per clean sample when retraining", &Config::mix_ratio),
        field("defense.temperature", "distillation temperature", &Config::temperature),
        field("defense.epoch_cap_factor", "retraining epoch cap relative to cnn.epochs", &Config::epoch_cap_factor),
        field("model", "CNN checkpoint used by attack/defend/baseline (default models/cnn.bin)", &Config::model_path),
    };
    return f;
}

const Field& find_field(const std::string& key)
{
    for (const auto& f : fields())
        if (f.key == key)
            return f;
    throw DataError("config: unknown key '" + key + "'");
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::uint64_t fnv(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL)
{
    for (char ch : s) {
        h ^= static_cast<std::uint8_t>(ch);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b)
{
    return fnv(std::to_string(b), a ^ 0x9e3779b97f4a7c15ULL);
}

std::string frac(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

} // namespace

std::vector<std::string> config_keys()
{
    std::vector<std::string> out;
    for (const auto& f : fields())
        out.push_back(f.key);
    return out;
}

std::string config_help(const std::string& key) { return find_field(key).help; }

void set(Config& c, const std::string& key, const std::string& value) { find_field(key).set(c, value); }

std::string get(const Config& c, const std::string& key) { return find_field(key).get(c); }

std::map<std::string, std::string> to_map(const Config& c)
{
    std::map<std::string, std::string> m;
    for (const auto& f : fields())
        m[f.key] = f.get(c);
    return m;
}

void validate(const Config& c)
{
    if (c.per_class == 0)
        throw DataError("config: per_class must be positive");
    if (c.random_seeds == 0)
        throw DataError("config: random_seeds must be positive");
    if (!(c.substitute_p >= 0.0 && c.substitute_p <= 1.0))
        throw DataError("config: substitute_p must lie in [0, 1]");
    train_config(c);
    attack::validate(attack_config(c));
    defense::validate(defense_config(c, defense::Kind::adversarial_training));
    align::parse_metric(c.metric);
    if (c.compare_metric != "none")
        align::parse_metric(c.compare_metric);
    baselines::validate({c.growth, c.seed});
    cnn_shape(c, 2).validate();
}

void apply_config_file(Config& c, std::istream& in)
{
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto h = line.find('#'); h != std::string::npos)
            line.erase(h);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("config line " + std::to_string(lineno) + ": expected key = value");
        set(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void apply_config_file(Config& c, const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open config file " + path.string());
    apply_config_file(c, in);
}

nn::TrainConfig train_config(const Config& c)
{
    nn::TrainConfig t;
    t.epochs = c.epochs;
    t.lr = c.lr;
    t.final_lr_fraction = c.final_lr_fraction;
    t.batch = c.batch;
    t.momentum = c.momentum;
    t.seed = c.seed;
    if (t.epochs == 0 || t.batch == 0 || !(t.lr > 0.0))
        throw DataError("config: cnn.epochs, cnn.batch and cnn.lr must be positive");
    return t;
}

nn::CnnShape cnn_shape(const Config& c, std::size_t classes)
{
    nn::CnnShape s;
    s.conv1 = c.conv1;
    s.conv2 = c.conv2;
    s.hidden = c.hidden;
    s.dropout = c.dropout;
    s.classes = classes;
    return s;
}

attack::AttackConfig attack_config(const Config& c)
{
    attack::AttackConfig a;
    a.epsilon = c.epsilon;
    a.cw_c = c.cw_c;
    a.cw_steps = c.cw_steps;
    a.cw_lr = c.cw_lr;
    a.kappa = c.kappa;
    a.max_loops = c.max_loops;
    a.growth = c.growth;
    a.escalation = c.escalation;
    a.restarts = c.restarts;
    a.seed = c.seed;
    return a;
}

defense::DefenseConfig defense_config(const Config& c, defense::Kind kind)
{
    defense::DefenseConfig d;
    d.kind = kind;
    d.mix_ratio = c.mix_ratio;
    d.temperature = c.temperature;
    d.epoch_cap_factor = c.epoch_cap_factor;
    return d;
}

// ---------------------------------------------------------------------------
// Data

Splits split(const std::vector<LabeledSample>& corpus)
{
    Splits s;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        (i % 5 < 3 ? s.train : i % 5 == 3 ? s.val : s.test).push_back(corpus[i]);
    return s;
}

std::vector<LabeledSample> per_class_subset(const std::vector<LabeledSample>& samples, std::size_t per_class)
{
    std::map<int, std::size_t> seen;
    std::vector<LabeledSample> out;
    for (const auto& s : samples)
        if (seen[s.label]++ < per_class)
            out.push_back(s);
    return out;
}

std::string to_hex(ByteView b)
{
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(b.size() * 2);
    for (auto v : b) {
        s.push_back(digits[v >> 4]);
        s.push_back(digits[v & 15]);
    }
    return s;
}

Bytes from_hex(const std::string& s)
{
    if (s.size() % 2)
        throw DataError("hex string of odd length");
    Bytes out(s.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        unsigned v = 0;
        const auto r = std::from_chars(s.data() + 2 * i, s.data() + 2 * i + 2, v, 16);
        if (r.ec != std::errc{} || r.ptr != s.data() + 2 * i + 2)
            throw DataError("bad hex digit");
        out[i] = static_cast<std::uint8_t>(v);
    }
    return out;
}

void write_atomic(const fs::path& path, const std::string& content)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error("cannot write " + tmp.string());
        out << content;
        if (!out.flush())
            throw Error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

void save_corpus(const std::vector<LabeledSample>& corpus, const fs::path& path)
{
    std::ostringstream out;
    for (const auto& s : corpus)
        out << json{{"id", s.id}, {"label", s.label}, {"source", s.source}, {"bytes", to_hex(s.bytes)}}.dump() << '\n';
    write_atomic(path, out.str());
}

std::vector<LabeledSample> load_corpus(const fs::path& path, const WidthPolicy& policy)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("no corpus at " + path.string() + " (run synth first)");
    std::vector<LabeledSample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        try {
            const auto j = json::parse(line);
            out.push_back(make_sample(j.at("id"), from_hex(j.at("bytes")), j.at("label"), j.at("source"), policy));
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot read " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Attack records

namespace {

json trace_json(const align::AlignmentTrace& t)
{
    // Runs of matches are stored as their count; inserts as [nop, boundary].
    json d = json::array();
    std::size_t run = 0;
    for (const auto& x : t.decisions) {
        if (x.kind == align::Decision::Kind::Match) {
            ++run;
            continue;
        }
        if (run)
            d.push_back(run);
        run = 0;
        d.push_back(json::array({x.nop, x.boundary}));
    }
    if (run)
        d.push_back(run);
    return json{{"decisions", d}, {"raw_cost", t.raw_cost}, {"total_cost", t.total_cost}, {"length", t.achieved_length}};
}

align::AlignmentTrace trace_from_json(const json& j)
{
    align::AlignmentTrace t;
    std::size_t k = 0;
    for (const auto& d : j.at("decisions")) {
        if (d.is_number()) {
            for (std::size_t r = d.get<std::size_t>(); r > 0; --r)
                t.decisions.push_back(align::Decision::match(k++));
        } else {
            t.decisions.push_back(align::Decision::insert(d.at(0), d.at(1)));
        }
    }
    t.raw_cost = j.at("raw_cost");
    t.total_cost = j.at("total_cost");
    t.achieved_length = j.at("length");
    return t;
}

} // namespace

std::string to_jsonl(const std::vector<AttackRecord>& records)
{
    std::ostringstream out;
    for (const auto& r : records) {
        json j{{"id", r.id},
               {"label", r.label},
               {"loops", r.loops},
               {"evaded", r.evaded},
               {"equivalent", r.equivalent},
               {"program", to_hex(r.program)},
               {"first_program", to_hex(r.first_program)},
               {"first_target", to_hex(r.first_target)},
               {"trace", trace_json(r.trace)}};
        out << j.dump() << '\n';
    }
    return out.str();
}

std::vector<AttackRecord> load_attacks(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("no attack records at " + path.string() + " (run attack first)");
    std::vector<AttackRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        try {
            const auto j = json::parse(line);
            AttackRecord r;
            r.id = j.at("id");
            r.label = j.at("label");
            r.loops = j.at("loops");
            r.evaded = j.at("evaded");
            r.equivalent = j.at("equivalent");
            r.program = from_hex(j.at("program"));
            r.first_program = from_hex(j.at("first_program"));
            r.first_target = from_hex(j.at("first_target"));
            r.trace = trace_from_json(j.at("trace"));
            out.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw DataError(path.string() + ": " + e.what());
        }
    }
    return out;
}

std::vector<AttackRecord> attack_samples(const nn::TinyCnn& cnn, const std::vector<LabeledSample>& samples,
                                         const Config& c, align::Metric metric, std::ostream* log)
{
    attack::LoopContext ctx;
    ctx.model = &cnn;
    ctx.cfg = attack_config(c);
    ctx.metric = metric;
    const std::size_t side = cnn.shape.input_side;
    ctx.targets.push_back(
        {"cnn", [&cnn, side](const Bytes&, const GrayImage& img) { return nn::predict(cnn, to_canvas(img, side)); }, {}});

    std::vector<AttackRecord> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const auto prog = isa::program_from_bytes(s.bytes);
        const auto r = attack::closed_loop(ctx, prog, s.label);
        AttackRecord rec;
        rec.id = s.id;
        rec.label = s.label;
        rec.loops = r.loops;
        rec.evaded = r.evaded;
        rec.program = r.program.text;
        rec.first_program = r.first_program;
        rec.first_target = r.first_target;
        rec.trace = r.trace;
        const auto inputs = isa::default_inputs();
        rec.equivalent = isa::equivalent(isa::execute(prog, inputs), isa::execute(r.program, inputs));
        out.push_back(std::move(rec));
        if (log && (i + 1) % 20 == 0)
            *log << "  attacked " << (i + 1) << "/" << samples.size() << "\n" << std::flush;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stages

namespace {

const WidthPolicy& policy()
{
    static const WidthPolicy p = WidthPolicy::default_table();
    return p;
}

std::size_t class_count(const std::vector<LabeledSample>& corpus)
{
    int mx = -1;
    for (const auto& s : corpus)
        mx = std::max(mx, s.label);
    return static_cast<std::size_t>(mx + 1);
}

std::vector<LabeledSample> corpus_of(const fs::path& dir)
{
    auto c = load_corpus(dir / "corpus" / "corpus.jsonl", policy());
    if (c.empty())
        throw DataError("corpus is empty");
    return c;
}

fs::path model_path(const Config& c, const fs::path& dir)
{
    return c.model_path.empty() ? dir / "models" / "cnn.bin" : fs::path(c.model_path);
}

nn::TinyCnn cnn_of(const Config& c, const fs::path& dir)
{
    const auto p = model_path(c, dir);
    if (!fs::exists(p))
        throw DataError("no trained model at " + p.string() + " (run train first or pass --model)");
    return nn::load_cnn(p.string());
}

trees::Surrogate surrogate_of(const fs::path& dir)
{
    const auto p = dir / "models" / "surrogate.json";
    std::ifstream in(p);
    if (!in)
        throw DataError("no surrogate at " + p.string() + " (run train first)");
    return trees::load_surrogate(in);
}

defense::Split split_of(const std::vector<LabeledSample>& v, std::size_t side)
{
    defense::Split s;
    for (const auto& x : v) {
        s.inputs.push_back(to_canvas(x.image, side));
        s.labels.push_back(x.label);
    }
    return s;
}

// Accuracy of a classifier over (bytes, label) pairs.
using Classifier = std::function<int(const Bytes&, const GrayImage&)>;

Classifier cnn_classifier(const nn::TinyCnn& m)
{
    return [&m](const Bytes&, const GrayImage& img) { return nn::predict(m, to_canvas(img, m.shape.input_side)); };
}

Classifier surrogate_classifier(const trees::Surrogate& s)
{
    return [&s](const Bytes& b, const GrayImage& img) { return trees::predict(s, b, img).label; };
}

double accuracy_of(const Classifier& f, const std::vector<Bytes>& programs, const std::vector<int>& labels)
{
    if (programs.empty())
        return 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < programs.size(); ++i)
        ok += f(programs[i], bytes_to_image(programs[i], policy())) == labels[i];
    return static_cast<double>(ok) / static_cast<double>(programs.size());
}

std::string csv_row(std::initializer_list<std::string> cells)
{
    std::string s;
    for (const auto& c : cells) {
        if (!s.empty())
            s += ',';
        s += c;
    }
    return s + '\n';
}

std::uint64_t sample_seed(const Config& c, const std::string& tag, const std::string& id, std::uint64_t k = 0)
{
    return mix(fnv(id, fnv(tag, c.seed * 0x100000001b3ULL + 1)), k);
}

std::vector<int> labels_of(const std::vector<LabeledSample>& v)
{
    std::vector<int> out;
    for (const auto& s : v)
        out.push_back(s.label);
    return out;
}

// Boundary lists are recomputed from the original programs, exactly as the
// aligner computed them.
heur::InsertionStats insertion_stats(const std::vector<AttackRecord>& records, const std::vector<LabeledSample>& corpus)
{
    const auto vocab = isa::default_vocabulary();
    const std::size_t maxlen = std::max<std::size_t>(1, isa::max_length(vocab));
    std::map<std::string, const LabeledSample*> by_id;
    for (const auto& s : corpus)
        by_id[s.id] = &s;
    std::vector<heur::TraceRecord> traces;
    for (const auto& r : records) {
        const auto it = by_id.find(r.id);
        if (it == by_id.end())
            throw DataError("stats: attack record " + r.id + " is not in the corpus");
        if (r.trace.insert_count() > 0)
            traces.push_back(
                {r.trace, r.label, isa::find_insertion_points(isa::program_from_bytes(it->second->bytes), maxlen)});
    }
    return heur::collect_stats(traces, vocab);
}

} // namespace

void stage_synth(const Config& c, const fs::path& dir, std::ostream& log)
{
    const auto corpus = synth_corpus(default_templates(), c.per_class, c.seed, policy());
    if (corpus.empty())
        throw DataError("synth: empty corpus (per_class = 0?)");
    save_corpus(corpus, dir / "corpus" / "corpus.jsonl");
    const auto h = corpus_hash(corpus);
    write_atomic(dir / "corpus" / "hash.txt", h + "\n");
    log << "  " << corpus.size() << " samples, hash " << h << "\n";
}

void stage_train(const Config& c, const fs::path& dir, std::ostream& log)
{
    const auto corpus = corpus_of(dir);
    const auto sp = split(corpus);
    const auto shape = cnn_shape(c, class_count(corpus));
    const std::size_t side = shape.input_side;
    const auto train = split_of(sp.train, side), val = split_of(sp.val, side), test = split_of(sp.test, side);

    nn::TrainingSet ts;
    for (std::size_t i = 0; i < train.inputs.size(); ++i)
        ts.add(train.inputs[i], train.labels[i], shape.classes);

    // Keep the best validation epoch.
    std::ostringstream curve;
    curve << "epoch,loss,train_accuracy,val_accuracy\n";
    nn::TinyCnn best;
    double best_val = -1.0;
    std::size_t best_epoch = 0;
    nn::train_cnn(nn::TinyCnn::init(shape, c.seed), ts, train_config(c),
                  [&](std::size_t e, const nn::TinyCnn& m, const nn::EpochStats& st) {
                      const double v = nn::accuracy(m, val.inputs, val.labels);
                      curve << e << ',' << frac(st.loss) << ',' << frac(st.train_accuracy) << ',' << frac(v) << '\n';
                      log << "  epoch " << e << " loss " << frac(st.loss) << " val " << frac(v) << "\n" << std::flush;
                      if (v > best_val) {
                          best_val = v;
                          best = m;
                          best_epoch = e;
                      }
                      return false;
                  });
    fs::create_directories(dir / "models");
    {
        std::ostringstream out;
        nn::save_cnn(best, out);
        write_atomic(dir / "models" / "cnn.bin", out.str());
    }

    trees::SurrogateConfig sc;
    sc.top_f = c.surrogate_top_f;
    sc.rounds = c.surrogate_rounds;
    const auto sur = trees::train_surrogate(sp.train, sc);
    {
        std::ostringstream out;
        trees::save_surrogate(sur, out);
        write_atomic(dir / "models" / "surrogate.json", out.str());
    }

    std::ostringstream t;
    t << "model,split,accuracy,n\n";
    t << csv_row({"cnn", "val", frac(best_val), std::to_string(val.inputs.size())});
    t << csv_row({"cnn", "test", frac(nn::accuracy(best, test.inputs, test.labels)), std::to_string(test.inputs.size())});
    t << csv_row({"surrogate", "val", frac(trees::accuracy(sur, sp.val)), std::to_string(sp.val.size())});
    t << csv_row({"surrogate", "test", frac(trees::accuracy(sur, sp.test)), std::to_string(sp.test.size())});
    write_atomic(dir / "tables" / "training_curve.csv", curve.str());
    write_atomic(dir / "tables" / "clean.csv", t.str());
    log << "  best epoch " << best_epoch << ", val " << frac(best_val) << "\n";
}

void stage_attack(const Config& c, const fs::path& dir, std::ostream& log)
{
    const auto corpus = corpus_of(dir);
    const auto cnn = cnn_of(c, dir);
    const auto sur = surrogate_of(dir);
    const auto subset = per_class_subset(split(corpus).test, c.attack_per_class);
    const auto labels = labels_of(subset);

    const auto metric = align::parse_metric(c.metric);
    const auto records = attack_samples(cnn, subset, c, metric, &log);
    write_atomic(dir / "attacks.jsonl", to_jsonl(records));

    std::vector<Bytes> clean, amao1, amaof;
    for (const auto& s : subset)
        clean.push_back(s.bytes);
    for (const auto& r : records) {
        amao1.push_back(r.first_program);
        amaof.push_back(r.program);
    }

    const auto vocab = isa::default_vocabulary();
    std::ostringstream seeds;
    seeds << "model,seed,accuracy,n\n";
    const std::vector<std::pair<std::string, Classifier>> models{{"cnn", cnn_classifier(cnn)},
                                                                {"surrogate", surrogate_classifier(sur)}};
    std::map<std::string, std::pair<double, double>> range;
    for (std::size_t k = 0; k < c.random_seeds; ++k) {
        std::vector<Bytes> rnd;
        for (const auto& s : subset)
            rnd.push_back(baselines::random_nop_insert(isa::program_from_bytes(s.bytes), vocab,
                                                       {c.growth, sample_seed(c, "random", s.id, k)})
                              .text);
        for (const auto& [name, f] : models) {
            const double a = accuracy_of(f, rnd, labels);
            seeds << csv_row({name, std::to_string(k), frac(a), std::to_string(rnd.size())});
            auto& rg = range.try_emplace(name, a, a).first->second;
            rg.first = std::min(rg.first, a);
            rg.second = std::max(rg.second, a);
        }
    }

    std::ostringstream t1;
    t1 << "model,dataset,accuracy,n\n";
    const std::string n = std::to_string(subset.size());
    for (const auto& [name, f] : models) {
        t1 << csv_row({name, "none", frac(accuracy_of(f, clean, labels)), n});
        t1 << csv_row({name, "amao_1", frac(accuracy_of(f, amao1, labels)), n});
        t1 << csv_row({name, "amao_f", frac(accuracy_of(f, amaof, labels)), n});
        t1 << csv_row({name, "random_min", frac(range[name].first), n});
        t1 << csv_row({name, "random_max", frac(range[name].second), n});
    }
    write_atomic(dir / "tables" / "table1.csv", t1.str());
    write_atomic(dir / "tables" / "random_seeds.csv", seeds.str());

    // Metric comparison: evasion rate of the white-box CNN per alignment metric.
    std::ostringstream mc;
    mc << "metric,evasion_rate,evaded,n\n";
    const auto add_metric = [&](const std::string& name, const std::vector<AttackRecord>& recs) {
        std::size_t ev = 0;
        for (std::size_t i = 0; i < recs.size(); ++i)
            ev += cnn_classifier(cnn)(recs[i].program, bytes_to_image(recs[i].program, policy())) != labels[i];
        mc << csv_row({name, frac(recs.empty() ? 0.0 : static_cast<double>(ev) / static_cast<double>(recs.size())),
                       std::to_string(ev), std::to_string(recs.size())});
    };
    add_metric(c.metric, records);
    if (c.compare_metric != "none" && c.compare_metric != c.metric) {
        log << "  comparison metric " << c.compare_metric << "\n";
        const auto other = attack_samples(cnn, subset, c, align::parse_metric(c.compare_metric), &log);
        write_atomic(dir / ("attacks_" + c.compare_metric + ".jsonl"), to_jsonl(other));
        add_metric(c.compare_metric, other);
    }
    write_atomic(dir / "tables" / "metrics.csv", mc.str());
}

void stage_stats(const Config&, const fs::path& dir, std::ostream& log)
{
    const auto stats = insertion_stats(load_attacks(dir / "attacks.jsonl"), corpus_of(dir));
    std::ostringstream joint, by_class, by_nop, raw;
    heur::write_joint_csv(stats, joint);
    heur::write_by_class_csv(stats, by_class);
    heur::write_by_nop_csv(stats, by_nop);
    heur::write_raw_csv(stats, raw);
    write_atomic(dir / "tables" / "stats_joint.csv", joint.str());
    write_atomic(dir / "tables" / "stats_by_class.csv", by_class.str());
    write_atomic(dir / "tables" / "stats_by_nop.csv", by_nop.str());
    write_atomic(dir / "tables" / "stats_raw.csv", raw.str());
    log << "  " << stats.slots.size() << " (class, bucket) cells\n";
}

void stage_baselines(const Config& c, const fs::path& dir, std::ostream& log)
{
    const auto corpus = corpus_of(dir);
    const auto cnn = cnn_of(c, dir);
    const auto sur = surrogate_of(dir);
    const auto subset = per_class_subset(split(corpus).test, c.attack_per_class);
    const auto labels = labels_of(subset);
    const auto records = load_attacks(dir / "attacks.jsonl");
    if (records.size() != subset.size())
        throw DataError("baselines: attacks.jsonl does not match the attack subset");
    const auto vocab = isa::default_vocabulary();

    // Insertion statistics come from the AMAO traces of this run.
    const auto stats = insertion_stats(records, corpus);

    using Method = std::function<Bytes(const LabeledSample&, std::size_t)>;
    const auto prog = [](const LabeledSample& s) { return isa::program_from_bytes(s.bytes); };
    const auto budget = [&](const std::string& tag, const LabeledSample& s) {
        return baselines::Budget{c.growth, sample_seed(c, tag, s.id)};
    };
    const std::vector<std::pair<std::string, Method>> methods{
        {"none", [](const LabeledSample& s, std::size_t) { return s.bytes; }},
        {"instruction_substitution",
         [&](const LabeledSample& s, std::size_t) {
             return baselines::instruction_substitute(prog(s), {c.substitute_p, false, true}, budget("isub", s)).text;
         }},
        {"static_value",
         [&](const LabeledSample& s, std::size_t) {
             return baselines::instruction_substitute(prog(s), {c.substitute_p, true, false}, budget("static", s)).text;
         }},
        {"subroutine_reorder",
         [&](const LabeledSample& s, std::size_t) {
             return baselines::subroutine_reorder(prog(s), sample_seed(c, "reorder", s.id)).text;
         }},
        {"random_insertion",
         [&](const LabeledSample& s, std::size_t) {
             return baselines::random_nop_insert(prog(s), vocab, budget("random", s)).text;
         }},
        {"control_flow_mixing",
         [&](const LabeledSample& s, std::size_t) { return baselines::mix_control_flow(prog(s), budget("mix", s)).text; }},
        {"payload_append",
         [&](const LabeledSample& s, std::size_t i) {
             const auto& tgt = records[i].first_target;
             const ByteView tail = tgt.size() > s.bytes.size() ? ByteView(tgt).subspan(s.bytes.size()) : ByteView{};
             return baselines::payload_append(s.bytes, tail, budget("payload", s));
         }},
        {"heuristic_insertion",
         [&](const LabeledSample& s, std::size_t) {
             if (!stats.has_class(s.label))
                 return s.bytes;
             return heur::heuristic_insert(prog(s), stats, s.label, vocab, budget("heuristic", s)).text;
         }},
        {"amao", [&](const LabeledSample&, std::size_t i) { return records[i].program; }},
    };

    std::ostringstream t3;
    t3 << "method,model,accuracy,n,equivalent\n";
    const auto inputs = isa::default_inputs();
    for (const auto& [name, f] : methods) {
        std::vector<Bytes> out;
        std::size_t same = 0;
        for (std::size_t i = 0; i < subset.size(); ++i) {
            out.push_back(f(subset[i], i));
            // Payload bytes follow the terminator; execution ignores them.
            same += isa::equivalent(isa::execute(ByteView(subset[i].bytes), inputs), isa::execute(ByteView(out.back()), inputs));
        }
        const std::string n = std::to_string(out.size());
        const std::string eq = frac(static_cast<double>(same) / static_cast<double>(out.size()));
        t3 << csv_row({name, "surrogate", frac(accuracy_of(surrogate_classifier(sur), out, labels)), n, eq});
        t3 << csv_row({name, "cnn", frac(accuracy_of(cnn_classifier(cnn), out, labels)), n, eq});
    }
    write_atomic(dir / "tables" / "table3.csv", t3.str());
    log << "  " << methods.size() << " methods\n";
}

void stage_defend(const Config& c, const fs::path& dir, std::ostream& log)
{
    if (!c.defenses) {
        log << "  disabled\n";
        return;
    }
    const auto corpus = corpus_of(dir);
    const auto base = cnn_of(c, dir);
    const auto sp = split(corpus);
    const std::size_t side = base.shape.input_side;
    const auto train = split_of(sp.train, side), val = split_of(sp.val, side), test = split_of(sp.test, side);
    const auto subset = per_class_subset(sp.test, c.attack_per_class);
    const auto labels = labels_of(subset);
    const auto records = load_attacks(dir / "attacks.jsonl");
    if (records.size() != subset.size())
        throw DataError("defend: attacks.jsonl does not match the attack subset");
    const auto metric = align::parse_metric(c.metric);

    std::vector<Bytes> payload;
    for (std::size_t i = 0; i < subset.size(); ++i) {
        const auto& tgt = records[i].first_target;
        const auto& b = subset[i].bytes;
        const ByteView tail = tgt.size() > b.size() ? ByteView(tgt).subspan(b.size()) : ByteView{};
        payload.push_back(baselines::payload_append(b, tail, {c.growth, c.seed}));
    }

    std::vector<defense::MatrixRow> rows;
    std::ostringstream training;
    training << "defense,epochs,val_accuracy,reached_target\n";
    const auto evaluate = [&](const std::string& name, const nn::TinyCnn& m, const std::vector<Bytes>& amao) {
        const auto f = cnn_classifier(m);
        rows.push_back({"cnn", name, "true", nn::accuracy(m, test.inputs, test.labels), test.inputs.size()});
        rows.push_back({"cnn", name, "payload", accuracy_of(f, payload, labels), payload.size()});
        rows.push_back({"cnn", name, "amao", accuracy_of(f, amao, labels), amao.size()});
    };
    std::vector<Bytes> amao_none;
    for (const auto& r : records)
        amao_none.push_back(r.program);
    evaluate("none", base, amao_none);

    const auto regenerate = [&](const nn::TinyCnn& m) {
        std::vector<Bytes> out;
        for (const auto& r : attack_samples(m, subset, c, metric, &log))
            out.push_back(r.program);
        return out;
    };

    const double base_val = nn::accuracy(base, val.inputs, val.labels);
    {
        log << "  adversarial training: attacking " << c.adv_per_class << " train samples per class\n";
        const auto adv_src = per_class_subset(sp.train, c.adv_per_class);
        const auto adv_recs = attack_samples(base, adv_src, c, metric, &log);
        defense::Split adv, adv_all;
        for (const auto& r : adv_recs) {
            auto x = to_canvas(bytes_to_image(r.program, policy()), side);
            if (r.evaded) {
                adv.inputs.push_back(x);
                adv.labels.push_back(r.label);
            }
            adv_all.inputs.push_back(std::move(x));
            adv_all.labels.push_back(r.label);
        }
        if (adv.inputs.empty())
            adv = adv_all;
        auto dc = defense_config(c, defense::Kind::adversarial_training);
        dc.retrain_target = base_val;
        const auto hard = defense::adversarial_training(base, train, adv, val, train_config(c), dc);
        if (!hard.reached_target)
            log << "  warning: adversarial training did not reach validation accuracy " << frac(base_val) << "\n";
        training << csv_row({"adversarial_training", std::to_string(hard.epochs), frac(hard.val_accuracy),
                             hard.reached_target ? "true" : "false"});
        std::ostringstream out;
        nn::save_cnn(hard.model, out);
        write_atomic(dir / "models" / "cnn_adversarial_training.bin", out.str());
        log << "  regenerating AMAO against the adversarially trained model\n";
        evaluate("adversarial_training", hard.model, regenerate(hard.model));
    }
    {
        log << "  distillation at T=" << format_double(c.temperature) << "\n";
        const auto d = defense::distill(base.shape, train, val, train_config(c),
                                        defense_config(c, defense::Kind::distillation));
        // Teacher and student each run the full schedule; the target column
        // says whether the student matched the undefended validation accuracy.
        training << csv_row({"distillation", std::to_string(2 * c.epochs), frac(d.val_accuracy),
                             d.val_accuracy >= base_val ? "true" : "false"});
        std::ostringstream out;
        nn::save_cnn(d.student, out);
        write_atomic(dir / "models" / "cnn_distillation.bin", out.str());
        log << "  regenerating AMAO against the distilled model\n";
        evaluate("distillation", d.student, regenerate(d.student));
    }

    std::ostringstream t2;
    defense::write_matrix_csv(rows, t2);
    write_atomic(dir / "tables" / "table2.csv", t2.str());
    write_atomic(dir / "tables" / "defense_training.csv", training.str());
}

void stage_report(const Config&, const fs::path& dir, std::ostream& log)
{
    std::ostringstream s;
    const auto section = [&](const std::string& title, const std::string& file) {
        const auto p = dir / "tables" / file;
        if (!fs::exists(p))
            return;
        s << title << "\n";
        const auto rows = read_csv(p);
        std::vector<std::size_t> w;
        for (const auto& r : rows)
            for (std::size_t i = 0; i < r.size(); ++i) {
                if (w.size() <= i)
                    w.push_back(0);
                w[i] = std::max(w[i], r[i].size());
            }
        for (const auto& r : rows) {
            s << "  ";
            for (std::size_t i = 0; i < r.size(); ++i)
                s << r[i] << (i + 1 < r.size() ? std::string(w[i] - r[i].size() + 2, ' ') : "");
            s << "\n";
        }
        s << "\n";
    };
    if (fs::exists(dir / "corpus" / "hash.txt")) {
        std::ifstream in(dir / "corpus" / "hash.txt");
        std::string h;
        in >> h;
        s << "corpus hash " << h << "\n\n";
    }
    section("Clean accuracy", "clean.csv");
    section("White-box CNN and transfer to the surrogate", "table1.csv");
    section("Defenses", "table2.csv");
    section("Defense retraining", "defense_training.csv");
    section("Obfuscation methods", "table3.csv");
    section("Alignment metric comparison", "metrics.csv");
    write_atomic(dir / "summary.txt", s.str());
    log << s.str();
}

std::vector<Stage> pipeline()
{
    return {{"synth", stage_synth},         {"train", stage_train},   {"attack", stage_attack},
            {"stats", stage_stats},         {"baseline", stage_baselines}, {"defend", stage_defend},
            {"report", stage_report}};
}

void write_manifest(const Config& c, const fs::path& dir)
{
    json j;
    j["format"] = "amao-run";
    j["version"] = kVersion;
    j["seed"] = c.seed;
    j["config"] = to_map(c);
    j["modules"] = {{"image-codec", kVersion}, {"desk-isa", kVersion}, {"amao-core", kVersion},
                    {"models", kVersion},      {"attacks", kVersion},  {"defenses", kVersion},
                    {"baselines", kVersion},   {"heuristics", kVersion}, {"harness", kVersion}};
    if (fs::exists(dir / "corpus" / "hash.txt")) {
        std::ifstream in(dir / "corpus" / "hash.txt");
        std::string h;
        in >> h;
        j["corpus_hash"] = h;
    }
    j["layout"] = {"manifest.json", "corpus/", "models/", "attacks.jsonl", "tables/*.csv", "summary.txt"};
    write_atomic(dir / "manifest.json", j.dump(2) + "\n");
}

Config load_manifest(const fs::path& dir)
{
    std::ifstream in(dir / "manifest.json");
    if (!in)
        throw DataError("no manifest.json in " + dir.string());
    Config c;
    try {
        const auto j = json::parse(in);
        for (const auto& [k, v] : j.at("config").items())
            set(c, k, v.get<std::string>());
    } catch (const json::exception& e) {
        throw DataError("manifest.json: " + std::string(e.what()));
    }
    return c;
}

RunResult run_experiment(const Config& c, const fs::path& out_root, std::ostream& log)
{
    validate(c);
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
    RunResult res;
    res.dir = out_root / (std::string(stamp) + "-" + std::to_string(c.seed));
    for (int k = 1; fs::exists(res.dir); ++k)
        res.dir = out_root / (std::string(stamp) + "-" + std::to_string(c.seed) + "." + std::to_string(k));
    fs::create_directories(res.dir);
    write_manifest(c, res.dir);
    log << "run directory " << res.dir.string() << "\n";

    for (const auto& st : pipeline()) {
        const auto t0 = std::chrono::steady_clock::now();
        log << "[" << st.name << "]\n" << std::flush;
        try {
            st.run(c, res.dir, log);
        } catch (const std::exception& e) {
            res.failures.push_back(st.name + ": " + e.what());
            write_atomic(res.dir / "failures.txt", res.failures.back() + "\n");
            log << "stage " << st.name << " failed: " << e.what() << "\n";
            throw;
        }
        if (st.name == "synth")
            write_manifest(c, res.dir);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log << "  (" << format_double(std::round(secs * 10) / 10) << " s)\n" << std::flush;
    }
    return res;
}

} // namespace amao::harness
