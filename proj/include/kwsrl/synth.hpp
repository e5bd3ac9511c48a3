#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kwsrl/rng.hpp"

namespace kwsrl::synth {

// Stand-in corpus in the Speech Commands layout for machines without the
// real recordings. Each keyword is rendered from a coarse phone sequence by a
// formant synthesizer; speakers differ in pitch, vocal tract length, rate
// and accent, and every clip gets background noise at a random SNR.

struct Speaker {
    std::uint32_t id = 0;
    double f0 = 120.0;  // Hz
    double formant_scale = 1.0;
    double rate = 1.0;  // duration multiplier
    double breathiness = 0.1;
    double accent[3] = {1.0, 1.0, 1.0};  // per-formant multipliers
};

Speaker make_speaker(std::uint32_t id);

struct ClipOptions {
    int sample_rate = 16000;
    double snr_db_min = -6.0;
    double snr_db_max = 20.0;
    double min_length = 0.85;  // fraction of one second; shorter clips occur
};

// One clip (at most one second) of `keyword` spoken by `speaker`. Throws
// ConfigError for words without a phone recipe.
std::vector<float> render(const std::string& keyword, const Speaker& speaker, const ClipOptions& options, Rng& rng);

bool has_recipe(const std::string& keyword);

struct CorpusOptions {
    std::size_t per_class = 2360;
    std::size_t speakers = 2618;
    std::uint64_t seed = 1;
    ClipOptions clip;
};

// Writes <root>/<keyword>/<speaker hex>_nohash_<n>.wav for every keyword and
// returns the number of files. Existing files are overwritten.
std::size_t generate_corpus(const std::filesystem::path& root, const std::vector<std::string>& keywords,
                            const CorpusOptions& options);

}  // namespace kwsrl::synth
