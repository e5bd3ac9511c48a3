// kwsrl: command-line front end for feature extraction, supervised
// benchmark, pre-training, RL training, the with/without comparison and
// plotting.

#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "kwsrl/error.hpp"
#include "kwsrl/experiment.hpp"
#include "kwsrl/synth.hpp"

using namespace kwsrl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string profile = "paper";
    std::string config_path;
    std::string subset;
    std::optional<std::size_t> episodes;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string corpus;
    std::vector<std::string> overrides;
    bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c)
{
    cmd->add_option("--profile", c.profile, "Preset: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--config", c.config_path, "Config file (section.key = value); replaces the preset");
    cmd->add_option("--subset", c.subset, "binary, main20 or all30")->check(CLI::IsMember({"binary", "main20", "all30"}));
    cmd->add_option("--episodes", c.episodes, "RL episodes");
    cmd->add_option("--seed", c.seed, "Run seed (initialization, episode draws, dropout)");
    cmd->add_option("--out", c.out, "Output directory");
    cmd->add_option("--corpus", c.corpus, "Speech Commands root directory");
    cmd->add_option("--set", c.overrides, "Override one config key, e.g. --set rl.gamma=0.95");
    cmd->add_flag("--quiet", c.quiet, "No progress output");
}

exp::ExperimentConfig resolve(const Common& c)
{
    exp::ExperimentConfig cfg = c.config_path.empty() ? exp::ExperimentConfig::preset(exp::parse_profile(c.profile))
                                                      : exp::ExperimentConfig::load(c.config_path);
    if (!c.subset.empty()) cfg.subset = data::parse_subset(c.subset);
    if (c.episodes) cfg.rl.num_episodes = *c.episodes;
    if (c.seed) cfg.rl.seed = *c.seed;
    if (!c.out.empty()) cfg.out_dir = c.out;
    if (!c.corpus.empty()) cfg.corpus_root = c.corpus;
    for (const std::string& kv : c.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

exp::Log logger(const Common& c)
{
    if (c.quiet) return {};
    return [](const std::string& line) {
        std::fprintf(stderr, "%s\n", line.c_str());
        std::fflush(stderr);
    };
}

void emit(const json& j) { std::cout << j.dump() << std::endl; }

json arm_json(const exp::ArmSummary& a)
{
    return {{"initial_mean", a.initial_mean}, {"final_mean", a.final_mean}, {"episodes", a.episodes}};
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Keyword spotting with an episodic RL policy network"};
    app.require_subcommand(1);
    Common common;

    auto* features = app.add_subcommand("features", "Scan the corpus, split it and extract MFCC features");
    auto* pretrain = app.add_subcommand("pretrain", "Supervised pre-training on the pre-train split");
    auto* benchmark = app.add_subcommand("benchmark", "Supervised benchmark on the 80/20 split");
    auto* rl_train = app.add_subcommand("rl-train", "One RL run over the RL pool");
    auto* compare = app.add_subcommand("compare", "RL with and without pre-training, same seed and split");
    auto* plot = app.add_subcommand("plot", "SVG chart from metrics CSV files");
    auto* show = app.add_subcommand("config", "Print the resolved configuration");
    auto* synth_cmd = app.add_subcommand("synth-corpus", "Write a synthetic corpus in the Speech Commands layout");
    for (auto* cmd : {features, pretrain, benchmark, rl_train, compare, show}) add_common(cmd, common);

    std::string pretrained;
    rl_train->add_option("--pretrained", pretrained, "Checkpoint to start from");

    std::vector<std::string> csvs, names;
    std::string kind = "accuracy", plot_out;
    plot->add_option("csv", csvs, "Metrics CSV files")->required();
    plot->add_option("--kind", kind, "accuracy or stddev")->check(CLI::IsMember({"accuracy", "stddev"}));
    plot->add_option("--names", names, "Legend entries, one per CSV");
    plot->add_option("--out", plot_out, "SVG path")->required();

    std::string synth_root, synth_subset = "all30";
    std::size_t per_class = 2360;
    std::uint64_t synth_seed = 1;
    synth_cmd->add_option("--out", synth_root, "Corpus root to write")->required();
    synth_cmd->add_option("--subset", synth_subset, "Keywords to render")->check(CLI::IsMember({"binary", "main20", "all30"}));
    synth_cmd->add_option("--per-class", per_class, "Clips per keyword");
    synth_cmd->add_option("--seed", synth_seed, "Corpus seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << std::endl;
        return 2;
    }

    try {
        if (*plot) {
            std::vector<exp::Series> series;
            for (std::size_t i = 0; i < csvs.size(); ++i)
                series.push_back({i < names.size() ? names[i] : fs::path(csvs[i]).stem().string(),
                                  exp::read_metrics_csv(csvs[i])});
            exp::render_plot(series, exp::parse_plot_kind(kind), plot_out);
            emit({{"command", "plot"}, {"svg", plot_out}, {"series", series.size()}});
            return 0;
        }
        if (*synth_cmd) {
            synth::CorpusOptions o;
            o.per_class = per_class;
            o.seed = synth_seed;
            const auto spec = data::subset(data::parse_subset(synth_subset));
            const std::size_t n = synth::generate_corpus(synth_root, spec.keywords, o);
            emit({{"command", "synth-corpus"}, {"root", synth_root}, {"files", n}});
            return 0;
        }

        const exp::ExperimentConfig cfg = resolve(common);
        if (*show) {
            std::cout << cfg.to_text();
            return 0;
        }
        const exp::Log log = logger(common);
        fs::create_directories(cfg.out_dir);
        cfg.save(cfg.out_dir / "config.conf");
        const exp::PreparedData data = exp::prepare_data(cfg, log);

        if (*features) {
            emit({{"command", "features"},
                  {"clips", data.features.size()},
                  {"n_mfcc", data.arch.n_mfcc},
                  {"n_frames", data.arch.n_frames},
                  {"classes", data.spec.keywords},
                  {"pretrain", data.split.pretrain.size()},
                  {"rl_pool", data.split.rl_pool.size()},
                  {"bench_train", data.split.bench_train.size()},
                  {"bench_test", data.split.bench_test.size()}});
        } else if (*pretrain) {
            exp::run_pretrain(cfg, data, log);
            emit({{"command", "pretrain"}, {"checkpoint", (cfg.out_dir / "pretrained.ckpt").string()}});
        } else if (*benchmark) {
            const auto r = exp::run_benchmark(cfg, data, log);
            emit({{"command", "benchmark"},
                  {"subset", data::to_string(cfg.subset)},
                  {"test_accuracy", r.test_accuracy},
                  {"test_loss", r.test_loss},
                  {"best_epoch", r.best_epoch},
                  {"epochs", r.epochs.size()},
                  {"checkpoint", r.checkpoint.string()}});
        } else if (*rl_train) {
            policy::PolicyParams init = pretrained.empty() ? exp::initial_params(cfg, data.arch)
                                                           : policy::load_checkpoint(pretrained, data.arch);
            const auto csv = cfg.out_dir / "metrics.csv";
            const auto rows = exp::run_rl(cfg, data, std::move(init), csv, pretrained.empty() ? "rl" : "rl (pre-trained)", log);
            const std::vector<exp::Series> series = {{pretrained.empty() ? "rl" : "rl (pre-trained)", rows}};
            exp::render_plot(series, exp::PlotKind::accuracy, cfg.out_dir / "accuracy.svg");
            exp::render_plot(series, exp::PlotKind::stddev, cfg.out_dir / "stddev.svg");
            emit({{"command", "rl-train"}, {"metrics", csv.string()}, {"summary", arm_json(exp::summarize(rows, cfg.rolling_window))}});
        } else if (*compare) {
            const auto r = exp::run_compare(cfg, data, log);
            emit({{"command", "compare"},
                  {"subset", r.report.subset},
                  {"with", arm_json(r.report.with)},
                  {"without", arm_json(r.report.without)},
                  {"delta_initial", r.report.delta_initial()},
                  {"delta_final", r.report.delta_final()},
                  {"out_dir", cfg.out_dir.string()}});
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << json{{"error", e.kind()}, {"message", e.what()}}.dump() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << std::endl;
        return 1;
    }
}
