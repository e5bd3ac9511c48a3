#include "kwsrl/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "kwsrl/error.hpp"

namespace kwsrl::data {

namespace {

std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

std::uint32_t le32(const unsigned char* p)
{
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put16(std::string& out, std::uint16_t v)
{
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}

void put32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xfffe;

}  // namespace

WavAudio read_wav(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto fail = [&](const std::string& what) { throw FormatError(path.string() + ": " + what); };

    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        fail("not a RIFF/WAVE file");

    bool have_fmt = false;
    std::uint16_t channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::size_t data_size = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* chunk = bytes.data() + pos;
        const std::uint32_t size = le32(chunk + 4);
        const std::size_t body = pos + 8;
        const std::size_t available = bytes.size() - body;
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (size < 16 || available < 16) fail("truncated fmt chunk");
            const unsigned char* f = bytes.data() + body;
            std::uint16_t format = le16(f);
            if (format == kFormatExtensible) {
                if (size < 40 || available < 40) fail("truncated extensible fmt chunk");
                format = le16(f + 24);  // first two bytes of the sub-format GUID
            }
            if (format != kFormatPcm) fail("unsupported audio format " + std::to_string(format) + " (need PCM)");
            channels = le16(f + 2);
            rate = le32(f + 4);
            bits = le16(f + 14);
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = bytes.data() + body;
            data_size = std::min<std::size_t>(size, available);
            break;
        }
        pos = body + size + (size & 1u);
    }

    if (!have_fmt) fail("missing fmt chunk");
    if (channels != 1) fail("unsupported channel count " + std::to_string(channels) + " (need mono)");
    if (bits != 16) fail("unsupported bits per sample " + std::to_string(bits) + " (need 16)");
    if (rate == 0) fail("sample rate is zero");
    if (!data) fail("missing data chunk");

    WavAudio audio;
    audio.sample_rate = rate;
    audio.samples.resize(data_size / 2);
    for (std::size_t i = 0; i < audio.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(le16(data + 2 * i));
        audio.samples[i] = static_cast<float>(v) / 32768.0f;
    }
    return audio;
}

void write_wav(const std::filesystem::path& path, std::span<const float> samples, unsigned sample_rate)
{
    const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
    std::string out;
    out.reserve(44 + data_bytes);
    out += "RIFF";
    put32(out, 36 + data_bytes);
    out += "WAVEfmt ";
    put32(out, 16);
    put16(out, kFormatPcm);
    put16(out, 1);
    put32(out, sample_rate);
    put32(out, sample_rate * 2);
    put16(out, 2);
    put16(out, 16);
    out += "data";
    put32(out, data_bytes);
    for (float s : samples) {
        const long q = std::lround(static_cast<double>(s) * 32768.0);
        put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L))));
    }

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for " + path.string());
}

}  // namespace kwsrl::data
