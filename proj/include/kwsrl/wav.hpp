#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace kwsrl::data {

struct WavAudio {
    std::vector<float> samples;  // normalized by 1/32768
    unsigned sample_rate = 0;
};

// Reads a 16-bit mono PCM RIFF/WAVE file. Anything else raises FormatError
// naming the offending property.
WavAudio read_wav(const std::filesystem::path& path);

// Writes 16-bit mono PCM; samples are clipped to the representable range.
void write_wav(const std::filesystem::path& path, std::span<const float> samples, unsigned sample_rate);

}  // namespace kwsrl::data
