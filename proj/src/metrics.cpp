#include "kwsrl/metrics.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "kwsrl/error.hpp"

namespace kwsrl::exp {

namespace fs = std::filesystem;

RollingStats::RollingStats(std::size_t window) : window_(window)
{
    if (window == 0) throw ConfigError("rolling window must be >= 1");
}

void RollingStats::push(double value)
{
    values_.push_back(value);
    if (values_.size() > window_) values_.pop_front();
}

double RollingStats::mean() const
{
    if (values_.empty()) return 0.0;
    return std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
}

double RollingStats::stddev() const
{
    if (values_.empty()) return 0.0;
    const double mu = mean();
    double ss = 0.0;
    for (double v : values_) ss += (v - mu) * (v - mu);
    return std::sqrt(ss / static_cast<double>(values_.size()));
}

std::string format_row(const EpisodeMetrics& m)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%.6g,%d,%.6g,%.6g,%.6g,%.6g", m.episode, m.accuracy, m.reward_sum, m.loss,
                  m.rolling_mean, m.rolling_std, m.wall_ms);
    return buf;
}

MetricsWriter::MetricsWriter(const fs::path& path) : path_(path)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    file_ = std::fopen(path.string().c_str(), "wb");
    if (!file_) throw IoError("cannot open metrics file " + path.string());
    if (std::fprintf(file_, "%s\n", kMetricsHeader) < 0 || std::fflush(file_) != 0)
        throw IoError("cannot write metrics file " + path.string());
}

MetricsWriter::~MetricsWriter()
{
    if (file_) std::fclose(file_);
}

void MetricsWriter::write(const EpisodeMetrics& m)
{
    if (std::fprintf(file_, "%s\n", format_row(m).c_str()) < 0 || std::fflush(file_) != 0)
        throw IoError("cannot write metrics file " + path_.string());
}

std::vector<EpisodeMetrics> read_metrics_csv(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics file " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader)
        throw FormatError(path.string() + ": missing or unexpected header");
    std::vector<EpisodeMetrics> rows;
    std::size_t number = 1;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) continue;
        EpisodeMetrics m;
        char tail = 0;
        if (std::sscanf(line.c_str(), "%zu,%lf,%d,%lf,%lf,%lf,%lf%c", &m.episode, &m.accuracy, &m.reward_sum, &m.loss,
                        &m.rolling_mean, &m.rolling_std, &m.wall_ms, &tail) != 7)
            throw FormatError(path.string() + ":" + std::to_string(number) + ": malformed row");
        rows.push_back(m);
    }
    return rows;
}

PlotKind parse_plot_kind(const std::string& name)
{
    if (name == "accuracy") return PlotKind::accuracy;
    if (name == "stddev") return PlotKind::stddev;
    throw ConfigError("unknown plot kind '" + name + "' (accuracy|stddev)");
}

namespace {

std::string escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

std::string render_svg(const std::vector<Series>& series, PlotKind kind)
{
    if (series.empty()) throw ConfigError("plot: no series given");
    std::size_t max_episode = 1;
    for (const Series& s : series) {
        if (s.rows.empty()) throw FormatError("plot: series '" + s.name + "' has no rows");
        for (const auto& r : s.rows) max_episode = std::max(max_episode, r.episode);
    }
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    const double width = 720, height = 440, left = 70, right = 20, top = 40, bottom = 60;
    const double pw = width - left - right, ph = height - top - bottom;
    const double y_max = kind == PlotKind::accuracy ? 1.0 : 0.5;
    const auto sx = [&](double e) { return left + pw * (max_episode > 1 ? (e - 1) / static_cast<double>(max_episode - 1) : 0.0); };
    const auto sy = [&](double v) { return top + ph * (1.0 - std::clamp(v, 0.0, y_max) / y_max); };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << (kind == PlotKind::accuracy ? "Rolling mean accuracy" : "Rolling standard deviation of accuracy")
      << "</text>\n";

    // grid and ticks
    for (int i = 0; i <= 5; ++i) {
        const double v = y_max * i / 5.0, y = sy(v);
        o << "<line x1=\"" << num(left) << "\" y1=\"" << num(y) << "\" x2=\"" << num(left + pw) << "\" y2=\"" << num(y)
          << "\" stroke=\"#e0e0e0\"/>\n";
        o << "<text x=\"" << num(left - 6) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << num(v)
          << "</text>\n";
    }
    for (int i = 0; i <= 5; ++i) {
        const double e = 1.0 + (static_cast<double>(max_episode) - 1.0) * i / 5.0, x = sx(e);
        o << "<line x1=\"" << num(x) << "\" y1=\"" << num(top + ph) << "\" x2=\"" << num(x) << "\" y2=\""
          << num(top + ph + 5) << "\" stroke=\"black\"/>\n";
        o << "<text x=\"" << num(x) << "\" y=\"" << num(top + ph + 20) << "\" text-anchor=\"middle\">"
          << static_cast<long long>(std::llround(e)) << "</text>\n";
    }
    o << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    o << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(height - 15) << "\" text-anchor=\"middle\">episode</text>\n";
    o << "<text transform=\"translate(18 " << num(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << (kind == PlotKind::accuracy ? "accuracy (rolling mean)" : "accuracy (rolling std)") << "</text>\n";

    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = colors[i % std::size(colors)];
        o << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t k = 0; k < series[i].rows.size(); ++k) {
            const auto& r = series[i].rows[k];
            const double v = kind == PlotKind::accuracy ? r.rolling_mean : r.rolling_std;
            o << (k ? " " : "") << num(sx(static_cast<double>(r.episode))) << ',' << num(sy(v));
        }
        o << "\"/>\n";
    }
    // legend
    for (std::size_t i = 0; i < series.size(); ++i) {
        const double y = top + 14 + 18.0 * static_cast<double>(i);
        o << "<g class=\"legend\"><line x1=\"" << num(left + 12) << "\" y1=\"" << num(y) << "\" x2=\"" << num(left + 36)
          << "\" y2=\"" << num(y) << "\" stroke=\"" << colors[i % std::size(colors)] << "\" stroke-width=\"2\"/>";
        o << "<text x=\"" << num(left + 42) << "\" y=\"" << num(y + 4) << "\">" << escape(series[i].name)
          << "</text></g>\n";
    }
    o << "</svg>\n";
    return o.str();
}

void render_plot(const std::vector<Series>& series, PlotKind kind, const fs::path& path)
{
    write_text_file(path, render_svg(series, kind));
}

ArmSummary summarize(const std::vector<EpisodeMetrics>& rows, std::size_t initial, std::size_t last)
{
    if (rows.empty()) throw DatasetError("summary of an empty run");
    if (initial == 0 || last == 0) throw ConfigError("summary windows must be >= 1");
    ArmSummary s;
    s.episodes = rows.size();
    const std::size_t ni = std::min(initial, rows.size()), nl = std::min(last, rows.size());
    for (std::size_t i = 0; i < ni; ++i) s.initial_mean += rows[i].accuracy;
    for (std::size_t i = rows.size() - nl; i < rows.size(); ++i) s.final_mean += rows[i].accuracy;
    s.initial_mean /= static_cast<double>(ni);
    s.final_mean /= static_cast<double>(nl);
    return s;
}

std::string ComparisonReport::to_text() const
{
    char buf[512];
    std::ostringstream o;
    o << "subset " << subset << ", " << with.episodes << " episodes (w/) and " << without.episodes
      << " episodes (w/o)\n";
    std::snprintf(buf, sizeof buf, "%-24s %10s %10s %10s\n", "mean accuracy (%)", "w/o", "w/", "delta");
    o << buf;
    const std::string first = "initial " + std::to_string(initial) + " episodes";
    const std::string final_ = "last " + std::to_string(last) + " episodes";
    std::snprintf(buf, sizeof buf, "%-24s %10.2f %10.2f %10.2f\n", first.c_str(), 100 * without.initial_mean,
                  100 * with.initial_mean, 100 * delta_initial());
    o << buf;
    std::snprintf(buf, sizeof buf, "%-24s %10.2f %10.2f %10.2f\n", final_.c_str(), 100 * without.final_mean,
                  100 * with.final_mean, 100 * delta_final());
    o << buf;
    return o.str();
}

void write_text_file(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write " + tmp.string());
        f << text;
        if (!f) throw IoError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

}  // namespace kwsrl::exp
