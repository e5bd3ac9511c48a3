#include "kwsrl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "kwsrl/dataset.hpp"
#include "kwsrl/error.hpp"
#include "kwsrl/wav.hpp"

namespace kwsrl::synth {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.141592653589793;

enum class Kind { vowel, glide, nasal, fric, vfric, stop, vstop, aspirate };

struct Phone {
    Kind kind;
    double f[3];      // formants at the start
    double f_end[3];  // and at the end (diphthongs); zeros mean "same as start"
    double dur_ms;
    double noise_center = 0;  // fricative / burst band
    double noise_bw = 0;
    double level = 1.0;  // relative loudness of the noise path
};

const std::map<std::string, Phone>& phones()
{
    static const std::map<std::string, Phone> table = {
        // vowels (adult reference formants)
        {"ih", {Kind::vowel, {400, 1900, 2550}, {}, 110}},
        {"eh", {Kind::vowel, {550, 1770, 2490}, {}, 120}},
        {"ae", {Kind::vowel, {690, 1660, 2490}, {}, 140}},
        {"ah", {Kind::vowel, {640, 1190, 2390}, {}, 120}},
        {"aa", {Kind::vowel, {730, 1090, 2440}, {}, 140}},
        {"ao", {Kind::vowel, {570, 840, 2410}, {}, 140}},
        {"uw", {Kind::vowel, {300, 870, 2240}, {}, 140}},
        {"iy", {Kind::vowel, {270, 2290, 3010}, {}, 130}},
        {"ax", {Kind::vowel, {500, 1500, 2500}, {}, 70}},
        {"er", {Kind::vowel, {490, 1350, 1690}, {}, 140}},
        {"ow", {Kind::vowel, {570, 840, 2410}, {300, 870, 2240}, 170}},
        {"ay", {Kind::vowel, {730, 1090, 2440}, {300, 2100, 2900}, 190}},
        {"aw", {Kind::vowel, {730, 1090, 2440}, {320, 880, 2250}, 190}},
        {"ey", {Kind::vowel, {550, 1770, 2490}, {290, 2250, 2950}, 170}},
        // approximants
        {"l", {Kind::glide, {360, 1300, 2700}, {}, 70}},
        {"r", {Kind::glide, {420, 1300, 1600}, {}, 70}},
        {"w", {Kind::glide, {300, 610, 2200}, {}, 60}},
        {"y", {Kind::glide, {260, 2070, 3020}, {}, 60}},
        // nasals
        {"m", {Kind::nasal, {250, 1000, 2200}, {}, 70}},
        {"n", {Kind::nasal, {250, 1450, 2500}, {}, 70}},
        // fricatives
        {"s", {Kind::fric, {500, 1500, 2500}, {}, 110, 6000, 2500, 0.4}},
        {"sh", {Kind::fric, {500, 1500, 2500}, {}, 120, 3000, 1400, 0.45}},
        {"f", {Kind::fric, {500, 1500, 2500}, {}, 100, 4500, 5000, 0.12}},
        {"th", {Kind::fric, {500, 1500, 2500}, {}, 100, 5500, 4500, 0.1}},
        {"z", {Kind::vfric, {300, 1500, 2500}, {}, 90, 6000, 2500, 0.25}},
        {"v", {Kind::vfric, {300, 1200, 2400}, {}, 70, 4500, 5000, 0.08}},
        {"hh", {Kind::aspirate, {500, 1500, 2500}, {}, 70}},
        // stops
        {"p", {Kind::stop, {500, 1500, 2500}, {}, 90, 900, 1200, 0.5}},
        {"t", {Kind::stop, {500, 1500, 2500}, {}, 90, 4500, 2500, 0.5}},
        {"k", {Kind::stop, {500, 1500, 2500}, {}, 95, 2200, 1000, 0.55}},
        {"b", {Kind::vstop, {300, 900, 2200}, {}, 70, 900, 1200, 0.3}},
        {"d", {Kind::vstop, {300, 1700, 2600}, {}, 70, 4000, 2500, 0.3}},
        {"g", {Kind::vstop, {300, 1900, 2300}, {}, 75, 2000, 1000, 0.35}},
    };
    return table;
}

const std::map<std::string, std::string>& recipes()
{
    static const std::map<std::string, std::string> words = {
        {"zero", "z ih r ow"}, {"one", "w ah n"},       {"two", "t uw"},        {"three", "th r iy"},
        {"four", "f ao r"},    {"five", "f ay v"},      {"six", "s ih k s"},    {"seven", "s eh v ax n"},
        {"eight", "ey t"},     {"nine", "n ay n"},      {"down", "d aw n"},     {"go", "g ow"},
        {"left", "l eh f t"},  {"no", "n ow"},          {"off", "ao f"},        {"on", "aa n"},
        {"right", "r ay t"},   {"stop", "s t aa p"},    {"up", "ah p"},         {"yes", "y eh s"},
        {"bed", "b eh d"},     {"bird", "b er d"},      {"cat", "k ae t"},      {"dog", "d ao g"},
        {"happy", "hh ae p iy"}, {"house", "hh aw s"},  {"marvin", "m aa r v ih n"},
        {"sheila", "sh iy l ax"}, {"tree", "t r iy"},   {"wow", "w aw"},
    };
    return words;
}

// Two-pole resonator with unity gain at DC (Klatt form).
struct Resonator {
    double y1 = 0, y2 = 0;
    double step(double x, double freq, double bw, double sr)
    {
        freq = std::min(freq, 0.45 * sr);
        const double c = -std::exp(-2.0 * kPi * bw / sr);
        const double b = 2.0 * std::exp(-kPi * bw / sr) * std::cos(2.0 * kPi * freq / sr);
        const double a = 1.0 - b - c;
        const double y = a * x + b * y1 + c * y2;
        y2 = y1;
        y1 = y;
        return y;
    }
};

struct Segment {
    const Phone* phone;
    std::size_t begin, end;  // samples
    double jitter[3];
    const Phone* next_voiced;  // for aspiration colouring
};

struct Targets {
    double f[3];
    double voice, aspiration, noise;  // source amplitudes
    int noise_segment;  // index of the segment feeding the noise path, or -1
};

Targets targets_at(const std::vector<Segment>& segs, std::size_t s, double u, const Speaker& spk)
{
    const Segment& seg = segs[s];
    const Phone& p = *seg.phone;
    Targets t{};
    t.noise_segment = -1;
    for (int k = 0; k < 3; ++k) {
        const double end = p.f_end[k] > 0 ? p.f_end[k] : p.f[k];
        t.f[k] = (p.f[k] + (end - p.f[k]) * u) * spk.formant_scale * spk.accent[k] * seg.jitter[k];
    }
    switch (p.kind) {
    case Kind::vowel: t.voice = 1.0; break;
    case Kind::glide: t.voice = 0.75; break;
    case Kind::nasal: t.voice = 0.45; break;
    case Kind::fric:
        t.noise = 1.0;
        t.noise_segment = static_cast<int>(s);
        break;
    case Kind::vfric:
        t.voice = 0.35;
        t.noise = 1.0;
        t.noise_segment = static_cast<int>(s);
        break;
    case Kind::aspirate: {
        const Phone* v = seg.next_voiced;
        if (v)
            for (int k = 0; k < 3; ++k) t.f[k] = v->f[k] * spk.formant_scale * spk.accent[k];
        t.aspiration = 1.0;
        break;
    }
    case Kind::stop:
    case Kind::vstop: {
        const bool voiced = p.kind == Kind::vstop;
        if (u < 0.55) {
            t.voice = voiced ? 0.12 : 0.0;  // closure
        } else if (u < 0.72) {
            t.noise = 1.0;  // burst
            t.noise_segment = static_cast<int>(s);
        } else if (voiced) {
            t.voice = 0.6;
        } else {
            t.aspiration = 0.5;
        }
        break;
    }
    }
    return t;
}

}  // namespace

bool has_recipe(const std::string& keyword) { return recipes().count(keyword) > 0; }

Speaker make_speaker(std::uint32_t id)
{
    Rng rng(Rng::mix(0x73706b72ULL ^ id));
    Speaker s;
    s.id = id;
    // vocal tract length: adult male ~1.0, adult female ~1.17, children higher
    const double r = rng.uniform();
    if (r < 0.45)
        s.formant_scale = rng.uniform(0.9, 1.05);
    else if (r < 0.9)
        s.formant_scale = rng.uniform(1.08, 1.22);
    else
        s.formant_scale = rng.uniform(1.2, 1.35);
    s.f0 = s.formant_scale < 1.06 ? rng.uniform(85, 155) : rng.uniform(160, 290);
    s.rate = rng.uniform(0.75, 1.35);
    s.breathiness = rng.uniform(0.0, 0.35);
    for (double& a : s.accent) a = rng.uniform(0.92, 1.08);
    return s;
}

std::vector<float> render(const std::string& keyword, const Speaker& spk, const ClipOptions& options, Rng& rng)
{
    auto it = recipes().find(keyword);
    if (it == recipes().end()) throw ConfigError("no synthesis recipe for keyword '" + keyword + "'");
    const double sr = options.sample_rate;

    std::vector<Segment> segs;
    std::istringstream in(it->second);
    std::string name;
    std::size_t pos = 0;
    while (in >> name) {
        const Phone& p = phones().at(name);
        const double dur = p.dur_ms * spk.rate * rng.uniform(0.8, 1.2) / 1000.0;
        const std::size_t n = static_cast<std::size_t>(dur * sr);
        Segment seg{&p, pos, pos + n, {}, nullptr};
        for (double& j : seg.jitter) j = rng.uniform(0.93, 1.07);
        segs.push_back(seg);
        pos += n;
    }
    for (std::size_t s = 0; s < segs.size(); ++s)
        for (std::size_t k = s + 1; k < segs.size() && !segs[s].next_voiced; ++k)
            if (segs[k].phone->kind == Kind::vowel) segs[s].next_voiced = segs[k].phone;

    const std::size_t tail = static_cast<std::size_t>(0.04 * sr);
    const std::size_t word_len = pos + tail;
    std::vector<double> voiced(word_len, 0.0), fric(word_len, 0.0);
    std::vector<int> fric_owner(word_len, -1);

    Resonator r1, r2, r3, r4, nb1, nb2;
    double f[3] = {500, 1500, 2500};
    double av = 0, aa = 0, an = 0;
    double phase = 0, g1 = 0, g2 = 0;
    double pitch_walk = 0;
    const double smooth_f = 1.0 - std::exp(-1.0 / (0.012 * sr));
    const double smooth_a = 1.0 - std::exp(-1.0 / (0.005 * sr));
    std::size_t seg_index = 0;
    for (std::size_t n = 0; n < word_len; ++n) {
        while (seg_index + 1 < segs.size() && n >= segs[seg_index].end) ++seg_index;
        Targets t{};
        t.noise_segment = -1;
        if (n < pos) {
            const Segment& seg = segs[seg_index];
            const double u = static_cast<double>(n - seg.begin) / static_cast<double>(std::max<std::size_t>(1, seg.end - seg.begin));
            t = targets_at(segs, seg_index, u, spk);
        } else {
            for (int k = 0; k < 3; ++k) t.f[k] = f[k];
        }
        for (int k = 0; k < 3; ++k) f[k] += smooth_f * (t.f[k] - f[k]);
        av += smooth_a * (t.voice - av);
        aa += smooth_a * (t.aspiration - aa);
        an += smooth_a * (t.noise - an);

        // glottal source with declination and slow jitter
        pitch_walk = 0.995 * pitch_walk + 0.002 * rng.normal();
        const double progress = static_cast<double>(n) / static_cast<double>(word_len);
        const double f0 = spk.f0 * (1.08 - 0.18 * progress) * (1.0 + pitch_walk);
        phase += f0 / sr;
        double pulse = 0.0;
        if (phase >= 1.0) {
            phase -= 1.0;
            pulse = 1.0;
        }
        g1 = 0.96 * g1 + pulse;
        g2 = 0.6 * g2 + 0.4 * g1;
        const double noise = rng.normal();
        const double source = av * (g2 + spk.breathiness * noise) + aa * 0.6 * noise;
        double y = r1.step(source, f[0], 90, sr);
        y = r2.step(y, f[1], 110, sr);
        y = r3.step(y, f[2], 170, sr);
        y = r4.step(y, 3500 * spk.formant_scale, 250, sr);
        voiced[n] = y;

        if (t.noise_segment >= 0 || an > 1e-3) {
            const int owner = t.noise_segment >= 0 ? t.noise_segment : (n < pos ? static_cast<int>(seg_index) : -1);
            const Phone* p = owner >= 0 ? segs[static_cast<std::size_t>(owner)].phone : nullptr;
            const double center = p && p->noise_center > 0 ? p->noise_center * (0.9 + 0.1 * spk.formant_scale) : 4000;
            const double bw = p && p->noise_bw > 0 ? p->noise_bw : 3000;
            const double x = nb2.step(nb1.step(an * noise, center, bw, sr), center, bw, sr);
            fric[n] = x;
            fric_owner[n] = owner;
        }
    }

    // Scale the noise path per segment relative to the voiced level.
    double voiced_energy = 0;
    std::size_t voiced_count = 0;
    for (const Segment& s : segs)
        if (s.phone->kind == Kind::vowel)
            for (std::size_t n = s.begin; n < s.end; ++n) {
                voiced_energy += voiced[n] * voiced[n];
                ++voiced_count;
            }
    const double voiced_rms = voiced_count ? std::sqrt(voiced_energy / static_cast<double>(voiced_count)) : 1.0;
    std::vector<double> seg_energy(segs.size(), 0.0);
    std::vector<std::size_t> seg_count(segs.size(), 0);
    for (std::size_t n = 0; n < word_len; ++n)
        if (fric_owner[n] >= 0) {
            seg_energy[static_cast<std::size_t>(fric_owner[n])] += fric[n] * fric[n];
            ++seg_count[static_cast<std::size_t>(fric_owner[n])];
        }
    std::vector<double> word(word_len);
    double dc = 0, prev_in = 0;
    for (std::size_t n = 0; n < word_len; ++n) {
        double v = voiced[n];
        if (fric_owner[n] >= 0) {
            const std::size_t s = static_cast<std::size_t>(fric_owner[n]);
            const double rms = seg_count[s] ? std::sqrt(seg_energy[s] / static_cast<double>(seg_count[s])) : 0.0;
            if (rms > 0) v += fric[n] * segs[s].phone->level * voiced_rms / rms;
        }
        // DC blocker
        dc = v - prev_in + 0.995 * dc;
        prev_in = v;
        word[n] = dc;
    }

    // Place the word in a clip and add background noise.
    std::size_t clip_len = static_cast<std::size_t>(sr);
    if (rng.uniform() < 0.12)
        clip_len = static_cast<std::size_t>(sr * rng.uniform(options.min_length, 1.0));
    std::vector<double> clip(clip_len, 0.0);
    const std::size_t used = std::min(word_len, clip_len);
    const std::size_t onset = clip_len > used ? static_cast<std::size_t>(rng.below(clip_len - used + 1)) : 0;
    double word_energy = 0;
    for (std::size_t n = 0; n < used; ++n) {
        clip[onset + n] = word[n];
        word_energy += word[n] * word[n];
    }
    const double word_rms = std::sqrt(word_energy / static_cast<double>(std::max<std::size_t>(used, 1)));

    std::vector<double> bg(clip_len);
    const double w_white = rng.uniform(0.0, 1.0), w_brown = rng.uniform(0.0, 1.0), w_hum = rng.uniform() < 0.3 ? rng.uniform(0.2, 1.0) : 0.0;
    const double hum_f = rng.uniform() < 0.5 ? 50.0 : 60.0;
    double brown = 0, bg_energy = 0;
    for (std::size_t n = 0; n < clip_len; ++n) {
        const double white = rng.normal();
        brown = 0.98 * brown + 0.2 * rng.normal();
        double hum = 0;
        for (int h = 1; h <= 4; ++h) hum += std::sin(2.0 * kPi * hum_f * h * static_cast<double>(n) / sr) / h;
        bg[n] = w_white * white + w_brown * brown + w_hum * hum;
        bg_energy += bg[n] * bg[n];
    }
    const double bg_rms = std::sqrt(bg_energy / static_cast<double>(clip_len));
    const double snr_db = rng.uniform(options.snr_db_min, options.snr_db_max);
    const double bg_gain = bg_rms > 0 ? word_rms / bg_rms * std::pow(10.0, -snr_db / 20.0) : 0.0;
    double peak = 0;
    for (std::size_t n = 0; n < clip_len; ++n) {
        clip[n] += bg_gain * bg[n];
        peak = std::max(peak, std::abs(clip[n]));
    }
    const double level = rng.uniform(0.05, 0.9);
    std::vector<float> out(clip_len);
    for (std::size_t n = 0; n < clip_len; ++n) out[n] = static_cast<float>(peak > 0 ? clip[n] * level / peak : 0.0);
    return out;
}

std::size_t generate_corpus(const fs::path& root, const std::vector<std::string>& keywords,
                            const CorpusOptions& options)
{
    if (options.speakers == 0) throw ConfigError("synthetic corpus needs at least one speaker");
    std::vector<std::uint32_t> ids(options.speakers);
    for (std::size_t i = 0; i < ids.size(); ++i)
        ids[i] = static_cast<std::uint32_t>(Rng::mix(options.seed * 0x100000001b3ULL + i) >> 32);
    std::size_t written = 0;
    for (const std::string& kw : keywords) {
        if (!has_recipe(kw)) throw ConfigError("no synthesis recipe for keyword '" + kw + "'");
        fs::create_directories(root / kw);
        std::map<std::uint32_t, std::size_t> repeats;
        Rng rng = Rng::derive(options.seed, data::fnv1a(kw));
        for (std::size_t i = 0; i < options.per_class; ++i) {
            const std::uint32_t id = ids[rng.below(ids.size())];
            Rng clip_rng(rng.next());
            const auto samples = render(kw, make_speaker(id), options.clip, clip_rng);
            char name[64];
            std::snprintf(name, sizeof name, "%08x_nohash_%zu.wav", id, repeats[id]++);
            data::write_wav(root / kw / name, samples, options.clip.sample_rate);
            ++written;
        }
    }
    return written;
}

}  // namespace kwsrl::synth
