#include "kwsrl/mfcc.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstdio>
#include <numbers>

#include "kwsrl/dataset.hpp"
#include "kwsrl/error.hpp"

namespace kwsrl::dsp {

namespace {

// Slaney mel scale: linear below 1 kHz, logarithmic above.
constexpr double kMelLinearStep = 200.0 / 3.0;
constexpr double kMelBreakHz = 1000.0;
constexpr double kMelBreak = kMelBreakHz / kMelLinearStep;

double log_step() { return std::log(6.4) / 27.0; }

double hz_to_mel(double hz)
{
    if (hz < kMelBreakHz) return hz / kMelLinearStep;
    return kMelBreak + std::log(hz / kMelBreakHz) / log_step();
}

double mel_to_hz(double mel)
{
    if (mel < kMelBreak) return mel * kMelLinearStep;
    return kMelBreakHz * std::exp(log_step() * (mel - kMelBreak));
}

// Index of position i of a signal of length n after symmetric reflection
// without edge repetition.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n)
{
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    i %= period;
    if (i < 0) i += period;
    if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
    return static_cast<std::size_t>(i);
}

}  // namespace

void MfccConfig::validate() const
{
    const auto fail = [](const std::string& m) { throw ConfigError("mfcc config: " + m); };
    if (sample_rate == 0) fail("sample_rate must be positive");
    if (frame_length < 2 || frame_length % 2 != 0) fail("frame_length must be even and >= 2");
    if (hop_length == 0 || hop_length > frame_length) fail("hop_length must be in [1, frame_length]");
    if (n_mels == 0) fail("n_mels must be positive");
    if (n_mfcc == 0 || n_mfcc > n_mels) fail("n_mfcc must be in [1, n_mels]");
    if (fmin < 0.0 || fmin >= fmax) fail("need 0 <= fmin < fmax");
    if (fmax > sample_rate / 2.0) fail("fmax exceeds the Nyquist frequency");
    if (!(log_floor > 0.0)) fail("log_floor must be positive");
}

std::string MfccConfig::canonical() const
{
    char buf[256];
    std::snprintf(buf, sizeof buf, "mfcc/v1 n_mfcc=%zu frame=%zu hop=%zu n_mels=%zu fmin=%.17g fmax=%.17g floor=%.17g sr=%u",
                  n_mfcc, frame_length, hop_length, n_mels, fmin, fmax, log_floor, sample_rate);
    return buf;
}

std::uint64_t MfccConfig::hash() const { return data::fnv1a(canonical()); }

std::size_t frame_count(std::size_t num_samples, std::size_t hop_length) { return 1 + num_samples / hop_length; }

nn::Tensor<double> mel_filterbank(const MfccConfig& config)
{
    config.validate();
    const std::size_t bins = config.frame_length / 2 + 1;
    const std::size_t n_mels = config.n_mels;

    std::vector<double> fft_hz(bins);
    for (std::size_t k = 0; k < bins; ++k)
        fft_hz[k] = static_cast<double>(k) * config.sample_rate / static_cast<double>(config.frame_length);

    const double mel_lo = hz_to_mel(config.fmin), mel_hi = hz_to_mel(config.fmax);
    std::vector<double> edges(n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));

    nn::Tensor<double> fb({n_mels, bins});
    for (std::size_t m = 0; m < n_mels; ++m) {
        const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
        const double norm = 2.0 / (right - left);
        for (std::size_t k = 0; k < bins; ++k) {
            const double rising = (fft_hz[k] - left) / (centre - left);
            const double falling = (right - fft_hz[k]) / (right - centre);
            fb.at(m, k) = std::max(0.0, std::min(rising, falling)) * norm;
        }
    }
    return fb;
}

struct MfccExtractor::Fft {
    std::size_t n;
    double* in;
    fftw_complex* out;
    fftw_plan plan;

    explicit Fft(std::size_t size) : n(size)
    {
        in = fftw_alloc_real(n);
        out = fftw_alloc_complex(n / 2 + 1);
        plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
    }
    ~Fft()
    {
        fftw_destroy_plan(plan);
        fftw_free(in);
        fftw_free(out);
    }
    Fft(const Fft&) = delete;
    Fft& operator=(const Fft&) = delete;
};

MfccExtractor::MfccExtractor(const MfccConfig& config)
    : config_(config), filterbank_(mel_filterbank(config)), dct_({config.n_mfcc, config.n_mels})
{
    const std::size_t n = config.frame_length;
    window_.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        window_[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));

    const auto mels = static_cast<double>(config.n_mels);
    for (std::size_t k = 0; k < config.n_mfcc; ++k) {
        const double s = k == 0 ? std::sqrt(1.0 / mels) : std::sqrt(2.0 / mels);
        for (std::size_t m = 0; m < config.n_mels; ++m)
            dct_.at(k, m) = s * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(m) + 1.0) /
                                         (2.0 * mels));
    }
    fft_ = std::make_unique<Fft>(n);
}

MfccExtractor::~MfccExtractor() = default;
MfccExtractor::MfccExtractor(MfccExtractor&&) noexcept = default;
MfccExtractor& MfccExtractor::operator=(MfccExtractor&&) noexcept = default;

nn::Tensor<double> MfccExtractor::mel_spectrogram(std::span<const float> samples)
{
    if (samples.empty()) throw ConfigError("mel_spectrogram: empty input");
    const std::size_t n = config_.frame_length, hop = config_.hop_length, bins = n / 2 + 1;
    const std::size_t frames = frame_count(samples.size(), hop);
    const auto pad = static_cast<std::ptrdiff_t>(n / 2);

    nn::Tensor<double> out({config_.n_mels, frames});
    std::vector<double> power(bins);
    for (std::size_t f = 0; f < frames; ++f) {
        const auto start = static_cast<std::ptrdiff_t>(f * hop) - pad;
        for (std::size_t i = 0; i < n; ++i)
            fft_->in[i] = window_[i] * samples[reflect_index(start + static_cast<std::ptrdiff_t>(i), samples.size())];
        fftw_execute(fft_->plan);
        for (std::size_t k = 0; k < bins; ++k) power[k] = fft_->out[k][0] * fft_->out[k][0] + fft_->out[k][1] * fft_->out[k][1];
        for (std::size_t m = 0; m < config_.n_mels; ++m) {
            const double* w = filterbank_.data().data() + m * bins;
            double acc = 0.0;
            for (std::size_t k = 0; k < bins; ++k) acc += w[k] * power[k];
            out.at(m, f) = acc;
        }
    }
    return out;
}

FeatureMatrix MfccExtractor::mfcc(std::span<const float> samples)
{
    const nn::Tensor<double> mel = mel_spectrogram(samples);
    const std::size_t frames = mel.dim(1), mels = config_.n_mels;

    nn::Tensor<double> log_mel({mels, frames});
    for (std::size_t i = 0; i < mel.size(); ++i) log_mel[i] = 10.0 * std::log10(mel[i] + config_.log_floor);

    FeatureMatrix fm;
    fm.n_mfcc = config_.n_mfcc;
    fm.n_frames = frames;
    fm.coeffs.resize(fm.n_mfcc * frames);
    for (std::size_t k = 0; k < fm.n_mfcc; ++k)
        for (std::size_t f = 0; f < frames; ++f) {
            double acc = 0.0;
            for (std::size_t m = 0; m < mels; ++m) acc += dct_.at(k, m) * log_mel.at(m, f);
            fm.coeffs[k * frames + f] = static_cast<float>(acc);
        }
    return fm;
}

nn::Tensor<double> mel_spectrogram(std::span<const float> samples, const MfccConfig& config)
{
    return MfccExtractor(config).mel_spectrogram(samples);
}

FeatureMatrix mfcc(std::span<const float> samples, const MfccConfig& config)
{
    return MfccExtractor(config).mfcc(samples);
}

}  // namespace kwsrl::dsp
