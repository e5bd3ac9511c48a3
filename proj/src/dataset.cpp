#include "kwsrl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "kwsrl/error.hpp"
#include "kwsrl/rng.hpp"
#include "kwsrl/wav.hpp"

namespace kwsrl::data {

namespace fs = std::filesystem;

const std::vector<std::string>& main_commands()
{
    static const std::vector<std::string> words = {"one",  "two",  "three", "four", "five", "six", "seven",
                                                   "eight", "nine", "down",  "go",   "left", "no",  "off",
                                                   "on",    "right", "stop", "up",   "yes",  "zero"};
    return words;
}

const std::vector<std::string>& sub_commands()
{
    static const std::vector<std::string> words = {"bed",   "bird",   "cat",    "dog",  "happy",
                                                   "house", "marvin", "sheila", "tree", "wow"};
    return words;
}

bool is_known_keyword(std::string_view keyword)
{
    const auto has = [&](const std::vector<std::string>& list) {
        return std::find(list.begin(), list.end(), keyword) != list.end();
    };
    return has(main_commands()) || has(sub_commands());
}

SubsetName parse_subset(std::string_view name)
{
    if (name == "binary") return SubsetName::binary;
    if (name == "main20") return SubsetName::main20;
    if (name == "all30") return SubsetName::all30;
    throw ConfigError("unknown subset '" + std::string(name) + "' (expected binary, main20 or all30)");
}

std::string to_string(SubsetName name)
{
    switch (name) {
    case SubsetName::binary: return "binary";
    case SubsetName::main20: return "main20";
    case SubsetName::all30: return "all30";
    }
    return "?";
}

std::optional<std::size_t> SubsetSpec::index_of(std::string_view keyword) const
{
    const auto it = std::find(keywords.begin(), keywords.end(), keyword);
    if (it == keywords.end()) return std::nullopt;
    return static_cast<std::size_t>(it - keywords.begin());
}

SubsetSpec subset(SubsetName name)
{
    SubsetSpec spec;
    spec.name = name;
    switch (name) {
    case SubsetName::binary: spec.keywords = {"left", "right"}; break;
    case SubsetName::main20: spec.keywords = main_commands(); break;
    case SubsetName::all30:
        spec.keywords = main_commands();
        spec.keywords.insert(spec.keywords.end(), sub_commands().begin(), sub_commands().end());
        break;
    }
    return spec;
}

namespace {

std::string speaker_of(const fs::path& file)
{
    const std::string stem = file.stem().string();
    const auto cut = stem.find("_nohash_");
    return cut == std::string::npos ? stem : stem.substr(0, cut);
}

bool is_wav(const fs::directory_entry& e)
{
    if (!e.is_regular_file()) return false;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".wav";
}

}  // namespace

std::vector<Utterance> scan_corpus(const fs::path& root, const SubsetSpec& spec)
{
    if (!fs::is_directory(root)) throw ConfigError("corpus root '" + root.string() + "' is not a directory");

    std::vector<std::string> missing;
    for (const auto& kw : spec.keywords)
        if (!fs::is_directory(root / kw)) missing.push_back(kw);
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw DatasetError("corpus '" + root.string() + "' is missing keyword directories: " + list);
    }

    std::vector<Utterance> out;
    for (std::size_t label = 0; label < spec.keywords.size(); ++label) {
        const std::string& kw = spec.keywords[label];
        std::size_t found = 0;
        for (const auto& entry : fs::directory_iterator(root / kw)) {
            if (!is_wav(entry)) continue;
            Utterance u;
            u.keyword = kw;
            u.label = label;
            u.path = entry.path();
            u.relative_path = kw + "/" + entry.path().filename().string();
            u.speaker_id = speaker_of(entry.path());
            out.push_back(std::move(u));
            ++found;
        }
        if (found == 0) throw DatasetError("keyword directory '" + kw + "' contains no WAV files");
    }
    std::sort(out.begin(), out.end(),
              [](const Utterance& a, const Utterance& b) { return a.relative_path < b.relative_path; });
    return out;
}

Utterance load_wav(const fs::path& path)
{
    WavAudio audio = read_wav(path);
    Utterance u;
    u.keyword = path.parent_path().filename().string();
    u.path = path;
    u.relative_path = u.keyword + "/" + path.filename().string();
    u.speaker_id = speaker_of(path);
    u.samples = std::move(audio.samples);
    u.sample_rate = audio.sample_rate;
    return u;
}

void ensure_loaded(Utterance& u)
{
    if (!u.samples.empty()) return;
    WavAudio audio = read_wav(u.path);
    u.samples = std::move(audio.samples);
    u.sample_rate = audio.sample_rate;
}

std::vector<float> pad_or_trim(std::span<const float> samples, std::size_t target_len)
{
    if (target_len == 0) throw ConfigError("pad_or_trim: target length must be positive");
    std::vector<float> out(target_len, 0.0f);
    std::copy_n(samples.begin(), std::min(samples.size(), target_len), out.begin());
    return out;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis)
{
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

TwoWaySplit stratified_split(std::span<const std::string> keys, std::span<const std::size_t> labels, double ratio,
                             std::uint64_t seed)
{
    if (keys.size() != labels.size()) throw LogicError("stratified_split: keys and labels differ in length");
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must be in (0, 1), got " + std::to_string(ratio));

    std::map<std::size_t, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < keys.size(); ++i) by_label[labels[i]].push_back(i);

    TwoWaySplit out;
    for (auto& [label, members] : by_label) {
        if (members.size() < 2)
            throw DatasetError("class " + std::to_string(label) + " has " + std::to_string(members.size()) +
                               " item(s); at least 2 are needed to stratify");
        std::vector<std::pair<std::uint64_t, std::size_t>> ranked;
        for (std::size_t i : members) ranked.emplace_back(Rng::mix(fnv1a(keys[i]) ^ Rng::mix(seed)), i);
        std::sort(ranked.begin(), ranked.end());
        const auto n = static_cast<double>(members.size());
        auto take = static_cast<std::size_t>(std::llround(ratio * n));
        take = std::clamp<std::size_t>(take, 1, members.size() - 1);
        for (std::size_t r = 0; r < ranked.size(); ++r)
            (r < take ? out.first : out.second).push_back(ranked[r].second);
    }
    std::sort(out.first.begin(), out.first.end());
    std::sort(out.second.begin(), out.second.end());
    return out;
}

SplitAssignment split(std::span<const Utterance> utterances, const SplitRatios& ratios, std::uint64_t seed)
{
    std::vector<std::string> keys;
    std::vector<std::size_t> labels;
    for (const auto& u : utterances) {
        keys.push_back(u.relative_path);
        labels.push_back(u.label);
    }
    // Independent families: different hash streams over the full subset.
    TwoWaySplit pre = stratified_split(keys, labels, ratios.pretrain, seed);
    TwoWaySplit bench = stratified_split(keys, labels, ratios.bench_train, seed ^ 0x62656e6368ULL);
    return {std::move(pre.first), std::move(pre.second), std::move(bench.first), std::move(bench.second)};
}

void write_split_manifest(const fs::path& path, std::span<const Utterance> utterances,
                          const SplitAssignment& assignment)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write split manifest " + path.string());
    const auto emit = [&](const char* name, const std::vector<std::size_t>& ids) {
        for (std::size_t i : ids) out << name << '\t' << utterances[i].relative_path << '\n';
    };
    emit("pretrain", assignment.pretrain);
    emit("rl_pool", assignment.rl_pool);
    emit("bench_train", assignment.bench_train);
    emit("bench_test", assignment.bench_test);
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace kwsrl::data
