#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kwsrl::data {

enum class SubsetName { binary, main20, all30 };

SubsetName parse_subset(std::string_view name);
std::string to_string(SubsetName name);

// Directory names of the corpus, lowercase ("marvin", "sheila").
const std::vector<std::string>& main_commands();
const std::vector<std::string>& sub_commands();
bool is_known_keyword(std::string_view keyword);

// Ordered class list; a keyword's class index is its position.
struct SubsetSpec {
    SubsetName name = SubsetName::binary;
    std::vector<std::string> keywords;

    std::size_t num_classes() const noexcept { return keywords.size(); }
    std::optional<std::size_t> index_of(std::string_view keyword) const;
};

SubsetSpec subset(SubsetName name);

struct Utterance {
    std::string keyword;
    std::size_t label = 0;
    std::string speaker_id;
    std::filesystem::path path;
    std::string relative_path;   // "<keyword>/<file>.wav", the split and manifest key
    std::vector<float> samples;  // empty until loaded
    unsigned sample_rate = 0;
};

// Lists every WAV under root/<keyword>/ for the subset's keywords, sorted by
// relative path. Samples are not loaded.
std::vector<Utterance> scan_corpus(const std::filesystem::path& root, const SubsetSpec& spec);

// Reads the samples of one file into a fresh Utterance (keyword and speaker
// taken from the path).
Utterance load_wav(const std::filesystem::path& path);

// Loads samples in place if they are not present yet.
void ensure_loaded(Utterance& u);

std::vector<float> pad_or_trim(std::span<const float> samples, std::size_t target_len);

struct SplitRatios {
    double pretrain = 0.10;     // rest goes to the RL pool
    double bench_train = 0.80;  // rest goes to the benchmark test set

    bool operator==(const SplitRatios&) const = default;
};

// Indices into the utterance list the split was computed from.
struct SplitAssignment {
    std::vector<std::size_t> pretrain;
    std::vector<std::size_t> rl_pool;
    std::vector<std::size_t> bench_train;
    std::vector<std::size_t> bench_test;
};

struct TwoWaySplit {
    std::vector<std::size_t> first;
    std::vector<std::size_t> second;
};

// Stratified hash bucketing: within each label, items are ordered by a
// seeded hash of their key and the first round(ratio * n) go to `first`.
// Every class keeps the ratio to within one item and both sides stay
// non-empty. Output index lists are ascending. A label with fewer than two
// items cannot be stratified and raises DatasetError.
TwoWaySplit stratified_split(std::span<const std::string> keys, std::span<const std::size_t> labels, double ratio,
                             std::uint64_t seed);

SplitAssignment split(std::span<const Utterance> utterances, const SplitRatios& ratios, std::uint64_t seed);

// Plain-text manifest, one `partition<TAB>relative_path` line per item.
void write_split_manifest(const std::filesystem::path& path, std::span<const Utterance> utterances,
                          const SplitAssignment& assignment);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace kwsrl::data
