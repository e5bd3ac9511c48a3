#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "kwsrl/dataset.hpp"
#include "kwsrl/features.hpp"
#include "kwsrl/metrics.hpp"
#include "kwsrl/mfcc.hpp"
#include "kwsrl/policy.hpp"
#include "kwsrl/rl.hpp"

namespace kwsrl::exp {

enum class Mode { benchmark, rl, compare };
Mode parse_mode(const std::string& name);
std::string to_string(Mode mode);

enum class Profile { paper, desk };
Profile parse_profile(const std::string& name);
std::string to_string(Profile profile);

struct BenchmarkConfig {
    double lr = 1e-4;  // SGD
    std::size_t batch = 32;
    std::size_t max_epochs = 50;
    std::size_t patience = 5;  // epochs without a better validation accuracy
    double val_split = 0.10;   // of the benchmark training part

    bool operator==(const BenchmarkConfig&) const = default;
};

// Layer sizes of the policy network. Input shape and class count follow
// from the MFCC settings and the subset.
struct ModelConfig {
    std::size_t conv1_filters = 16;
    std::size_t conv2_filters = 8;
    std::size_t kernel_size = 3;
    std::size_t pool_window = 2;
    std::size_t lstm_hidden = 50;
    std::vector<std::size_t> dense_units = {512, 256, 64};
    double dropout_rate = 0.3;

    bool operator==(const ModelConfig&) const = default;
};

struct ExperimentConfig {
    Mode mode = Mode::compare;
    data::SubsetName subset = data::SubsetName::binary;
    std::filesystem::path corpus_root = "data/speech_commands";
    std::filesystem::path out_dir = "runs/paper";
    std::filesystem::path cache_dir = "runs/cache";  // empty disables the feature cache
    std::uint64_t split_seed = 0;
    data::SplitRatios split;
    dsp::MfccConfig mfcc;
    ModelConfig model;
    rl::RLConfig rl;
    BenchmarkConfig benchmark;
    std::size_t rolling_window = 200;
    bool wall_clock = true;  // false writes 0 to wall_ms so CSVs are reproducible byte for byte

    void validate() const;
    policy::Architecture architecture(std::size_t num_classes) const;

    // `section.key = value` lines; to_text() followed by parse() gives back
    // an equal config.
    std::string to_text() const;
    static ExperimentConfig parse(const std::string& text, const std::string& origin = "<config>");
    static ExperimentConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    // Overwrites one field; key and value as in the text form.
    void set(const std::string& key, const std::string& value);

    static ExperimentConfig preset(Profile profile);

    bool operator==(const ExperimentConfig&) const = default;
};

using Log = std::function<void(const std::string&)>;

// Corpus scan, split and features for one subset.
struct PreparedData {
    data::SubsetSpec spec;
    std::vector<data::Utterance> utterances;
    data::SplitAssignment split;
    std::vector<dsp::LabeledFeatures> features;  // parallel to utterances
    policy::Architecture arch;

    std::vector<dsp::LabeledFeatures> subset(const std::vector<std::size_t>& indices) const;
};

// Writes split.tsv into the output directory.
PreparedData prepare_data(const ExperimentConfig& config, const Log& log = {});

struct BenchmarkResult {
    double test_accuracy = 0.0;
    double test_loss = 0.0;
    std::size_t best_epoch = 0;
    std::vector<rl::EpochMetrics> epochs;
    std::filesystem::path checkpoint;
};

// Supervised training on the benchmark split with early stopping on
// validation accuracy; the best-validation parameters are evaluated on the
// test part and saved as benchmark.ckpt.
BenchmarkResult run_benchmark(const ExperimentConfig& config, const PreparedData& data, const Log& log = {});

policy::PolicyParams initial_params(const ExperimentConfig& config, const policy::Architecture& arch);

// Pre-training on the pre-train split; saves pretrained.ckpt and
// pretrain_epochs.csv.
policy::PolicyParams run_pretrain(const ExperimentConfig& config, const PreparedData& data, const Log& log = {});

// One RL run over the RL pool, streaming rows to `csv`.
std::vector<EpisodeMetrics> run_rl(const ExperimentConfig& config, const PreparedData& data,
                                   policy::PolicyParams initial, const std::filesystem::path& csv,
                                   const std::string& arm, const Log& log = {});

struct CompareResult {
    ComparisonReport report;
    std::vector<EpisodeMetrics> with;
    std::vector<EpisodeMetrics> without;
};

// Both arms share seed, split and episode draws; they differ only in the
// starting parameters. Writes with_pretraining.csv, without_pretraining.csv,
// accuracy.svg, stddev.svg and comparison.txt.
CompareResult run_compare(const ExperimentConfig& config, const PreparedData& data, const Log& log = {});

void write_epochs_csv(const std::filesystem::path& path, const std::vector<rl::EpochMetrics>& epochs);

}  // namespace kwsrl::exp
