#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "kwsrl/nn/tensor.hpp"

namespace kwsrl::dsp {

struct MfccConfig {
    std::size_t n_mfcc = 40;
    std::size_t frame_length = 2048;
    std::size_t hop_length = 512;
    std::size_t n_mels = 128;
    double fmin = 0.0;
    double fmax = 8000.0;
    double log_floor = 1e-10;
    unsigned sample_rate = 16000;

    // Throws ConfigError when an invariant is violated.
    void validate() const;

    // Stable text form; feeds the feature-cache key.
    std::string canonical() const;
    std::uint64_t hash() const;

    bool operator==(const MfccConfig&) const = default;
};

// Cepstral coefficients of one utterance, n_mfcc rows by n_frames columns,
// row-major.
struct FeatureMatrix {
    std::size_t n_mfcc = 0;
    std::size_t n_frames = 0;
    std::vector<float> coeffs;

    float at(std::size_t coeff, std::size_t frame) const { return coeffs[coeff * n_frames + frame]; }
    bool operator==(const FeatureMatrix&) const = default;
};

// Frames produced by centered framing: 1 + floor(num_samples / hop).
std::size_t frame_count(std::size_t num_samples, std::size_t hop_length);

// Slaney-style mel filterbank with area normalization, [n_mels, frame_length/2 + 1].
nn::Tensor<double> mel_filterbank(const MfccConfig& config);

// Holds the window, filterbank, DCT basis and FFT plan for one configuration.
// Not thread-safe; use one extractor per thread.
class MfccExtractor {
public:
    explicit MfccExtractor(const MfccConfig& config);
    ~MfccExtractor();
    MfccExtractor(MfccExtractor&&) noexcept;
    MfccExtractor& operator=(MfccExtractor&&) noexcept;

    const MfccConfig& config() const noexcept { return config_; }

    // Power mel spectrogram [n_mels, F]: reflection-padded centered frames,
    // periodic Hann window, |FFT|^2, mel filterbank.
    nn::Tensor<double> mel_spectrogram(std::span<const float> samples);

    // 10*log10(mel power + log_floor) followed by an orthonormal DCT-II over
    // the mel axis, first n_mfcc coefficients kept.
    FeatureMatrix mfcc(std::span<const float> samples);

private:
    struct Fft;

    MfccConfig config_;
    std::vector<double> window_;
    nn::Tensor<double> filterbank_;
    nn::Tensor<double> dct_;  // [n_mfcc, n_mels]
    std::unique_ptr<Fft> fft_;
};

nn::Tensor<double> mel_spectrogram(std::span<const float> samples, const MfccConfig& config);
FeatureMatrix mfcc(std::span<const float> samples, const MfccConfig& config);

}  // namespace kwsrl::dsp
