#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "kwsrl/dataset.hpp"
#include "kwsrl/mfcc.hpp"

namespace kwsrl::dsp {

struct LabeledFeatures {
    FeatureMatrix features;
    std::size_t label = 0;
};

struct ExtractStats {
    std::size_t computed = 0;
    std::size_t cache_hits = 0;
    std::size_t recovered = 0;  // corrupt cache files that were recomputed
};

// Cache file: 16-byte header ("MFCC", u32 version, u32 n_mfcc, u32 n_frames,
// little-endian) followed by row-major little-endian f32 coefficients.
void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& fm);
// Throws FormatError on a bad magic, version or size.
FeatureMatrix read_feature_file(const std::filesystem::path& path);

// Features of every utterance, each clip padded or trimmed to one second.
// With a non-empty cache_dir the result for (file content, config) is
// memoized on disk; writes go through a temporary file and a rename.
std::vector<LabeledFeatures> extract_batch(std::span<const data::Utterance> utterances, const MfccConfig& config,
                                           const std::filesystem::path& cache_dir, ExtractStats* stats = nullptr);

}  // namespace kwsrl::dsp
