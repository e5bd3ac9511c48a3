#include "kwsrl/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "kwsrl/error.hpp"

namespace kwsrl::exp {

namespace fs = std::filesystem;

namespace {

void say(const Log& log, const std::string& msg)
{
    if (log) log(msg);
}

std::string pct(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
    return buf;
}

}  // namespace

std::vector<dsp::LabeledFeatures> PreparedData::subset(const std::vector<std::size_t>& indices) const
{
    std::vector<dsp::LabeledFeatures> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(features.at(i));
    return out;
}

PreparedData prepare_data(const ExperimentConfig& config, const Log& log)
{
    config.validate();
    PreparedData d;
    d.spec = data::subset(config.subset);
    d.utterances = data::scan_corpus(config.corpus_root, d.spec);
    std::vector<std::size_t> per_class(d.spec.num_classes(), 0);
    for (const auto& u : d.utterances) ++per_class[u.label];
    for (std::size_t c = 0; c < per_class.size(); ++c)
        if (per_class[c] < 2)
            throw DatasetError("corpus " + config.corpus_root.string() + " has " + std::to_string(per_class[c]) +
                               " clips of '" + d.spec.keywords[c] + "'");
    d.split = data::split(d.utterances, config.split, config.split_seed);
    fs::create_directories(config.out_dir);
    data::write_split_manifest(config.out_dir / "split.tsv", d.utterances, d.split);

    dsp::ExtractStats stats;
    const auto t0 = std::chrono::steady_clock::now();
    d.features = dsp::extract_batch(d.utterances, config.mfcc, config.cache_dir, &stats);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[200];
    std::snprintf(buf, sizeof buf, "features: %zu clips (%zu computed, %zu cached) in %.1fs; split %zu/%zu rl, %zu/%zu bench",
                  d.features.size(), stats.computed, stats.cache_hits, secs, d.split.pretrain.size(),
                  d.split.rl_pool.size(), d.split.bench_train.size(), d.split.bench_test.size());
    say(log, buf);
    d.arch = config.architecture(d.spec.num_classes());
    d.arch.validate();
    return d;
}

policy::PolicyParams initial_params(const ExperimentConfig& config, const policy::Architecture& arch)
{
    return policy::init_params(arch, rl::stream(config.rl.seed, rl::Stream::init).next());
}

void write_epochs_csv(const fs::path& path, const std::vector<rl::EpochMetrics>& epochs)
{
    std::string text = "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
    char buf[160];
    for (const auto& e : epochs) {
        std::snprintf(buf, sizeof buf, "%zu,%.6g,%.6g,%.6g,%.6g\n", e.epoch, e.train_loss, e.train_accuracy, e.val_loss,
                      e.val_accuracy);
        text += buf;
    }
    write_text_file(path, text);
}

namespace {

std::string epoch_line(const char* what, const rl::EpochMetrics& m)
{
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s epoch %zu: train loss %.4f acc %.4f, val loss %.4f acc %.4f", what, m.epoch,
                  m.train_loss, m.train_accuracy, m.val_loss, m.val_accuracy);
    return buf;
}

}  // namespace

BenchmarkResult run_benchmark(const ExperimentConfig& config, const PreparedData& data, const Log& log)
{
    const BenchmarkConfig& bc = config.benchmark;
    std::vector<std::string> keys;
    std::vector<std::size_t> labels;
    for (std::size_t i : data.split.bench_train) {
        keys.push_back(data.utterances[i].relative_path);
        labels.push_back(data.utterances[i].label);
    }
    const auto parts = data::stratified_split(keys, labels, 1.0 - bc.val_split, config.split_seed ^ 0x76616cULL);
    std::vector<std::size_t> train, val;
    for (std::size_t k : parts.first) train.push_back(data.split.bench_train[k]);
    for (std::size_t k : parts.second) val.push_back(data.split.bench_train[k]);
    const std::span<const dsp::LabeledFeatures> all(data.features);

    policy::PolicyParams params = initial_params(config, data.arch);
    policy::PolicyParams best = params;
    auto opt = nn::Optimizer<float>::sgd(bc.lr);
    Rng shuffle = rl::stream(config.rl.seed, rl::Stream::pretrain);
    Rng dropout = Rng::derive(config.rl.seed ^ 0x62656e6368ULL, static_cast<std::uint64_t>(rl::Stream::dropout));
    BenchmarkResult result;
    double best_val = -1.0;
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= bc.max_epochs; ++epoch) {
        shuffle.shuffle(std::span<std::size_t>(train));
        rl::EpochMetrics m;
        m.epoch = epoch;
        std::tie(m.train_loss, m.train_accuracy) = rl::sgd_epoch(params, all, train, bc.batch, opt, dropout);
        std::tie(m.val_loss, m.val_accuracy) = rl::evaluate(params, all, val);
        result.epochs.push_back(m);
        say(log, epoch_line("benchmark", m));
        if (m.val_accuracy > best_val) {
            best_val = m.val_accuracy;
            best = params;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= bc.patience) {
            say(log, "benchmark: early stop after epoch " + std::to_string(epoch));
            break;
        }
    }
    std::tie(result.test_loss, result.test_accuracy) = rl::evaluate(best, all, data.split.bench_test);
    result.checkpoint = config.out_dir / "benchmark.ckpt";
    policy::save_checkpoint(best, result.checkpoint);
    write_epochs_csv(config.out_dir / "benchmark_epochs.csv", result.epochs);
    say(log, "benchmark: test accuracy " + pct(result.test_accuracy) + " (best epoch " +
                 std::to_string(result.best_epoch) + ")");
    return result;
}

policy::PolicyParams run_pretrain(const ExperimentConfig& config, const PreparedData& data, const Log& log)
{
    const auto items = data.subset(data.split.pretrain);
    auto result = rl::pretrain(initial_params(config, data.arch), items, config.rl,
                               [&](const rl::EpochMetrics& m) { say(log, epoch_line("pretrain", m)); });
    policy::save_checkpoint(result.params, config.out_dir / "pretrained.ckpt");
    write_epochs_csv(config.out_dir / "pretrain_epochs.csv", result.epochs);
    return std::move(result.params);
}

std::vector<EpisodeMetrics> run_rl(const ExperimentConfig& config, const PreparedData& data,
                                   policy::PolicyParams initial, const fs::path& csv, const std::string& arm,
                                   const Log& log)
{
    const auto pool = data.subset(data.split.rl_pool);
    MetricsWriter writer(csv);
    RollingStats stats(config.rolling_window);
    std::vector<EpisodeMetrics> rows;
    rows.reserve(config.rl.num_episodes);
    rl::Trainer trainer(config.rl, std::move(initial), pool);
    const std::size_t report_every = std::max<std::size_t>(1, config.rl.num_episodes / 20);
    for (std::size_t e = 0; e < config.rl.num_episodes; ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        const rl::EpisodeOutcome out = trainer.run_episode();
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        stats.push(out.accuracy);
        EpisodeMetrics m{out.episode, out.accuracy, out.reward_sum, out.loss, stats.mean(), stats.stddev(),
                         config.wall_clock ? ms : 0.0};
        writer.write(m);
        rows.push_back(m);
        if (out.episode % report_every == 0) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "%s: episode %zu accuracy %.2f rolling mean %.4f std %.4f loss %.4g",
                          arm.c_str(), out.episode, out.accuracy, m.rolling_mean, m.rolling_std, out.loss);
            say(log, buf);
        }
    }
    return rows;
}

CompareResult run_compare(const ExperimentConfig& config, const PreparedData& data, const Log& log)
{
    CompareResult r;
    const policy::PolicyParams pretrained = run_pretrain(config, data, log);
    r.with = run_rl(config, data, pretrained, config.out_dir / "with_pretraining.csv", "w/ pre-training", log);
    r.without = run_rl(config, data, initial_params(config, data.arch), config.out_dir / "without_pretraining.csv",
                       "w/o pre-training", log);
    r.report.subset = data::to_string(config.subset);
    r.report.initial = config.rolling_window;
    r.report.with = summarize(r.with, r.report.initial, r.report.last);
    r.report.without = summarize(r.without, r.report.initial, r.report.last);
    const std::vector<Series> series = {{"w/ pre-training", r.with}, {"w/o pre-training", r.without}};
    render_plot(series, PlotKind::accuracy, config.out_dir / "accuracy.svg");
    render_plot(series, PlotKind::stddev, config.out_dir / "stddev.svg");
    write_text_file(config.out_dir / "comparison.txt", r.report.to_text());
    say(log, r.report.to_text());
    return r;
}

}  // namespace kwsrl::exp
