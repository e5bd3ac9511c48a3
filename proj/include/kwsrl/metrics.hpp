#pragma once

#include <cstdio>
#include <deque>
#include <filesystem>
#include <string>
#include <vector>

namespace kwsrl::exp {

struct EpisodeMetrics {
    std::size_t episode = 0;  // 1-based
    double accuracy = 0.0;
    int reward_sum = 0;
    double loss = 0.0;
    double rolling_mean = 0.0;
    double rolling_std = 0.0;
    double wall_ms = 0.0;
};

// Mean and population standard deviation of the last `window` values (or of
// all values while fewer have been pushed).
class RollingStats {
public:
    explicit RollingStats(std::size_t window = 200);

    void push(double value);
    std::size_t count() const noexcept { return values_.size(); }
    std::size_t window() const noexcept { return window_; }
    double mean() const;
    double stddev() const;

private:
    std::size_t window_;
    std::deque<double> values_;
};

inline constexpr const char* kMetricsHeader = "episode,accuracy,reward_sum,loss,rolling_mean,rolling_std,wall_ms";

// One CSV row, numbers in %.6g.
std::string format_row(const EpisodeMetrics& m);

// Appends rows to a CSV file, flushing after each one so a killed run keeps
// a valid prefix.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::filesystem::path& path);
    ~MetricsWriter();
    MetricsWriter(const MetricsWriter&) = delete;
    MetricsWriter& operator=(const MetricsWriter&) = delete;

    void write(const EpisodeMetrics& m);
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
    std::FILE* file_ = nullptr;
};

std::vector<EpisodeMetrics> read_metrics_csv(const std::filesystem::path& path);

enum class PlotKind { accuracy, stddev };
PlotKind parse_plot_kind(const std::string& name);

struct Series {
    std::string name;
    std::vector<EpisodeMetrics> rows;
};

// Line chart of rolling_mean (accuracy) or rolling_std (stddev) against the
// episode index, one polyline per series plus a legend. Deterministic.
std::string render_svg(const std::vector<Series>& series, PlotKind kind);
void render_plot(const std::vector<Series>& series, PlotKind kind, const std::filesystem::path& path);

struct ArmSummary {
    double initial_mean = 0.0;  // mean accuracy over the first `initial` episodes
    double final_mean = 0.0;    // mean accuracy over the last `last` episodes
    std::size_t episodes = 0;
};

ArmSummary summarize(const std::vector<EpisodeMetrics>& rows, std::size_t initial = 200, std::size_t last = 5);

struct ComparisonReport {
    std::string subset;
    std::size_t initial = 200;
    std::size_t last = 5;
    ArmSummary with;
    ArmSummary without;

    double delta_initial() const { return with.initial_mean - without.initial_mean; }
    double delta_final() const { return with.final_mean - without.final_mean; }

    // Plain-text table, accuracies in percent.
    std::string to_text() const;
};

// Writes text through a temporary file and a rename.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace kwsrl::exp
