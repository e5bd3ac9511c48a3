#include "kwsrl/features.hpp"

#include <unistd.h>

#include <atomic>
#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>

#include "kwsrl/error.hpp"
#include "kwsrl/wav.hpp"

namespace kwsrl::dsp {

namespace fs = std::filesystem;

namespace {

constexpr std::uint32_t kCacheVersion = 1;

void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const char* p)
{
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

std::string read_all(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

void write_feature_file(const fs::path& path, const FeatureMatrix& fm)
{
    std::string out = "MFCC";
    put_u32(out, kCacheVersion);
    put_u32(out, static_cast<std::uint32_t>(fm.n_mfcc));
    put_u32(out, static_cast<std::uint32_t>(fm.n_frames));
    for (float v : fm.coeffs) put_u32(out, std::bit_cast<std::uint32_t>(v));

    fs::path tmp = path;
    static std::atomic<unsigned> counter{0};
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write " + tmp.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

FeatureMatrix read_feature_file(const fs::path& path)
{
    const std::string bytes = read_all(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "MFCC", 4) != 0)
        throw FormatError(path.string() + ": bad feature cache magic");
    if (get_u32(bytes.data() + 4) != kCacheVersion) throw FormatError(path.string() + ": unsupported cache version");
    FeatureMatrix fm;
    fm.n_mfcc = get_u32(bytes.data() + 8);
    fm.n_frames = get_u32(bytes.data() + 12);
    const std::size_t count = fm.n_mfcc * fm.n_frames;
    if (bytes.size() != 16 + 4 * count) throw FormatError(path.string() + ": payload size does not match header");
    fm.coeffs.resize(count);
    for (std::size_t i = 0; i < count; ++i) fm.coeffs[i] = std::bit_cast<float>(get_u32(bytes.data() + 16 + 4 * i));
    return fm;
}

std::vector<LabeledFeatures> extract_batch(std::span<const data::Utterance> utterances, const MfccConfig& config,
                                           const fs::path& cache_dir, ExtractStats* stats)
{
    config.validate();
    ExtractStats local;
    ExtractStats& st = stats ? *stats : local;
    const bool use_cache = !cache_dir.empty();
    if (use_cache) fs::create_directories(cache_dir);

    std::optional<MfccExtractor> extractor;
    const std::uint64_t config_hash = config.hash();
    std::vector<LabeledFeatures> out;
    out.reserve(utterances.size());

    for (const data::Utterance& u : utterances) {
        std::string raw;
        fs::path cache_file;
        if (use_cache) {
            raw = read_all(u.path);
            char name[64];
            std::snprintf(name, sizeof name, "%016" PRIx64 "-%016" PRIx64 ".mfcc", data::fnv1a(raw), config_hash);
            cache_file = cache_dir / name;
            if (fs::exists(cache_file)) {
                try {
                    FeatureMatrix fm = read_feature_file(cache_file);
                    if (fm.n_mfcc != config.n_mfcc || fm.n_frames != frame_count(config.sample_rate, config.hop_length))
                        throw FormatError(cache_file.string() + ": shape does not match configuration");
                    out.push_back({std::move(fm), u.label});
                    ++st.cache_hits;
                    continue;
                } catch (const Error& e) {
                    std::cerr << "warning: " << e.what() << "; recomputing\n";
                    ++st.recovered;
                }
            }
        }

        std::vector<float> samples = u.samples;
        unsigned rate = u.sample_rate;
        if (samples.empty()) {
            data::WavAudio audio = data::read_wav(u.path);
            samples = std::move(audio.samples);
            rate = audio.sample_rate;
        }
        if (rate != config.sample_rate)
            throw DatasetError(u.path.string() + ": sample rate " + std::to_string(rate) + " Hz, expected " +
                               std::to_string(config.sample_rate) + " Hz");
        if (!extractor) extractor.emplace(config);
        const std::vector<float> clip = data::pad_or_trim(samples, config.sample_rate);
        FeatureMatrix fm = extractor->mfcc(clip);
        ++st.computed;
        if (use_cache) write_feature_file(cache_file, fm);
        out.push_back({std::move(fm), u.label});
    }
    return out;
}

}  // namespace kwsrl::dsp
