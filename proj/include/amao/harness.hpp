#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "amao/attacks.hpp"
#include "amao/cnn.hpp"
#include "amao/dataset.hpp"
#include "amao/defenses.hpp"
#include "amao/surrogate.hpp"

// Experiment orchestration. A run directory holds
//   manifest.json  corpus/  models/  attacks.jsonl  tables/*.csv  summary.txt
// and every stage reads its inputs from, and writes its outputs to, that
// directory, so stages can also be run one at a time from the CLI.
namespace amao::harness {

struct Config {
    std::uint64_t seed = 7;
    std::size_t per_class = 200;
    std::size_t attack_per_class = 15; // test-split samples attacked per class
    std::size_t adv_per_class = 15;    // train-split samples attacked for adversarial training
    std::size_t random_seeds = 10;
    double growth = 1.25;
    double substitute_p = 1.0;

    std::size_t epochs = 16;
    double lr = 0.02;
    double final_lr_fraction = 0.1;
    std::size_t batch = 16;
    double momentum = 0.9;
    std::size_t conv1 = 8, conv2 = 16, hidden = 128;
    double dropout = 0.5;

    std::size_t surrogate_top_f = 500;
    std::size_t surrogate_rounds = 200;

    double epsilon = 4000.0;
    double cw_c = 0.01;
    std::size_t cw_steps = 40;
    double cw_lr = 15.0;
    double kappa = 20.0;
    std::size_t max_loops = 10;
    double escalation = 2.0;
    std::size_t restarts = 3;
    std::string metric = "pixel_l2";
    std::string compare_metric = "byte_l0"; // "none" skips the metric comparison

    bool defenses = true;
    double mix_ratio = 0.5;
    double temperature = 20.0;
    double epoch_cap_factor = 3.0;

    std::string model_path; // attack/defend/baseline: CNN checkpoint, default models/cnn.bin
};

// Every key accepted by set(); values are printed the way set() parses them.
std::vector<std::string> config_keys();
std::string config_help(const std::string& key);
void set(Config& c, const std::string& key, const std::string& value); // DataError on bad key/value
std::string get(const Config& c, const std::string& key);
std::map<std::string, std::string> to_map(const Config& c);
void validate(const Config& c);

// Flat "key = value" lines; '#' starts a comment.
void apply_config_file(Config& c, std::istream& in);
void apply_config_file(Config& c, const std::filesystem::path& path);

nn::TrainConfig train_config(const Config& c);
nn::CnnShape cnn_shape(const Config& c, std::size_t classes);
attack::AttackConfig attack_config(const Config& c);
defense::DefenseConfig defense_config(const Config& c, defense::Kind kind);

// Fixed split by corpus position: 3/5 train, 1/5 validation, 1/5 test.
struct Splits {
    std::vector<LabeledSample> train, val, test;
};
Splits split(const std::vector<LabeledSample>& corpus);
// The first `per_class` samples of each class, in corpus order.
std::vector<LabeledSample> per_class_subset(const std::vector<LabeledSample>& samples, std::size_t per_class);

std::string to_hex(ByteView b);
Bytes from_hex(const std::string& s);

// Corpus persistence: one JSON object per line.
void save_corpus(const std::vector<LabeledSample>& corpus, const std::filesystem::path& path);
std::vector<LabeledSample> load_corpus(const std::filesystem::path& path, const WidthPolicy& policy);

// Writes `content` to a sibling temporary file and renames it into place.
void write_atomic(const std::filesystem::path& path, const std::string& content);

struct AttackRecord {
    std::string id;
    int label = 0;
    std::size_t loops = 0;
    bool evaded = false;
    Bytes program;       // final executable
    Bytes first_program; // after loop 1
    Bytes first_target;  // B1 of loop 1
    align::AlignmentTrace trace;
    bool equivalent = false; // VM end state matches the original
};
std::string to_jsonl(const std::vector<AttackRecord>& records);
std::vector<AttackRecord> load_attacks(const std::filesystem::path& path);

// Runs the closed loop against `cnn` for each sample.
std::vector<AttackRecord> attack_samples(const nn::TinyCnn& cnn, const std::vector<LabeledSample>& samples,
                                         const Config& c, align::Metric metric, std::ostream* log = nullptr);

struct Stage {
    std::string name;
    void (*run)(const Config&, const std::filesystem::path& dir, std::ostream& log);
};

void stage_synth(const Config& c, const std::filesystem::path& dir, std::ostream& log);
void stage_train(const Config& c, const std::filesystem::path& dir, std::ostream& log);
void stage_attack(const Config& c, const std::filesystem::path& dir, std::ostream& log);
void stage_stats(const Config& c, const std::filesystem::path& dir, std::ostream& log);
void stage_baselines(const Config& c, const std::filesystem::path& dir, std::ostream& log);
void stage_defend(const Config& c, const std::filesystem::path& dir, std::ostream& log);
void stage_report(const Config& c, const std::filesystem::path& dir, std::ostream& log);

std::vector<Stage> pipeline();

void write_manifest(const Config& c, const std::filesystem::path& dir);
Config load_manifest(const std::filesystem::path& dir);

// Creates <out>/<timestamp>-<seed>/ and runs every stage. A failing stage is
// recorded in failures.txt and the run stops; outputs of earlier stages stay.
struct RunResult {
    std::filesystem::path dir;
    std::vector<std::string> failures;
};
RunResult run_experiment(const Config& c, const std::filesystem::path& out_root, std::ostream& log);

// Reads a CSV written by the stages into rows of cells (header included).
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

} // namespace amao::harness
