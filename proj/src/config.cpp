#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kwsrl/error.hpp"
#include "kwsrl/experiment.hpp"

namespace kwsrl::exp {

namespace fs = std::filesystem;

Mode parse_mode(const std::string& name)
{
    if (name == "benchmark") return Mode::benchmark;
    if (name == "rl") return Mode::rl;
    if (name == "compare") return Mode::compare;
    throw ConfigError("unknown mode '" + name + "' (benchmark|rl|compare)");
}

std::string to_string(Mode mode)
{
    switch (mode) {
    case Mode::benchmark: return "benchmark";
    case Mode::rl: return "rl";
    case Mode::compare: return "compare";
    }
    return "?";
}

Profile parse_profile(const std::string& name)
{
    if (name == "paper") return Profile::paper;
    if (name == "desk") return Profile::desk;
    throw ConfigError("unknown profile '" + name + "' (desk|paper)");
}

std::string to_string(Profile profile) { return profile == Profile::paper ? "paper" : "desk"; }

namespace {

std::string fmt(double v)
{
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest form that reads back exactly
    return std::string(buf, res.ptr);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }

std::string fmt(bool v) { return v ? "true" : "false"; }

std::string fmt(const std::vector<std::size_t>& v)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

template <typename U>
U parse_unsigned(const std::string& key, const std::string& v)
{
    U out{};
    const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size())
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& v)
{
    double out = 0;
    const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size())
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v)
{
    std::vector<std::size_t> out;
    if (v.empty() || v == "none") return out;
    std::istringstream in(v);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(parse_unsigned<std::size_t>(key, item));
    return out;
}

struct Field {
    const char* key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define KW_SIZE(name, member)                                                                                 \
    Field{name, [](const ExperimentConfig& c) { return fmt(static_cast<std::uint64_t>(c.member)); },          \
          [](ExperimentConfig& c, const std::string& v) { c.member = parse_unsigned<decltype(c.member)>(name, v); }}
#define KW_REAL(name, member)                                                  \
    Field{name, [](const ExperimentConfig& c) { return fmt(c.member); },       \
          [](ExperimentConfig& c, const std::string& v) { c.member = parse_double(name, v); }}

const std::vector<Field>& fields()
{
    static const std::vector<Field> table = {
        {"experiment.mode", [](const ExperimentConfig& c) { return to_string(c.mode); },
         [](ExperimentConfig& c, const std::string& v) { c.mode = parse_mode(v); }},
        {"experiment.subset", [](const ExperimentConfig& c) { return data::to_string(c.subset); },
         [](ExperimentConfig& c, const std::string& v) {
             try {
                 c.subset = data::parse_subset(v);
             } catch (const Error&) {
                 throw ConfigError("experiment.subset: unknown subset '" + v + "' (binary|main20|all30)");
             }
         }},
        {"experiment.corpus_root", [](const ExperimentConfig& c) { return c.corpus_root.string(); },
         [](ExperimentConfig& c, const std::string& v) { c.corpus_root = v; }},
        {"experiment.out_dir", [](const ExperimentConfig& c) { return c.out_dir.string(); },
         [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }},
        {"experiment.cache_dir", [](const ExperimentConfig& c) { return c.cache_dir.string(); },
         [](ExperimentConfig& c, const std::string& v) { c.cache_dir = v; }},
        KW_SIZE("data.split_seed", split_seed),
        KW_REAL("data.pretrain_fraction", split.pretrain),
        KW_REAL("data.bench_train_fraction", split.bench_train),
        KW_SIZE("mfcc.n_mfcc", mfcc.n_mfcc),
        KW_SIZE("mfcc.frame_length", mfcc.frame_length),
        KW_SIZE("mfcc.hop_length", mfcc.hop_length),
        KW_SIZE("mfcc.n_mels", mfcc.n_mels),
        KW_REAL("mfcc.fmin", mfcc.fmin),
        KW_REAL("mfcc.fmax", mfcc.fmax),
        KW_REAL("mfcc.log_floor", mfcc.log_floor),
        KW_SIZE("mfcc.sample_rate", mfcc.sample_rate),
        KW_SIZE("model.conv1_filters", model.conv1_filters),
        KW_SIZE("model.conv2_filters", model.conv2_filters),
        KW_SIZE("model.kernel_size", model.kernel_size),
        KW_SIZE("model.pool_window", model.pool_window),
        KW_SIZE("model.lstm_hidden", model.lstm_hidden),
        {"model.dense_units", [](const ExperimentConfig& c) { return c.model.dense_units.empty() ? std::string("none") : fmt(c.model.dense_units); },
         [](ExperimentConfig& c, const std::string& v) { c.model.dense_units = parse_list("model.dense_units", v); }},
        KW_REAL("model.dropout_rate", model.dropout_rate),
        KW_SIZE("rl.eta", rl.eta),
        KW_SIZE("rl.episodes", rl.num_episodes),
        KW_REAL("rl.gamma", rl.gamma),
        KW_SIZE("rl.sync_interval", rl.sync_interval),
        KW_REAL("rl.lr", rl.rl_lr),
        KW_REAL("rl.huber_delta", rl.huber_delta),
        KW_SIZE("rl.seed", rl.seed),
        {"rl.action_mode", [](const ExperimentConfig& c) { return rl::to_string(c.rl.action_mode); },
         [](ExperimentConfig& c, const std::string& v) { c.rl.action_mode = rl::parse_action_mode(v); }},
        KW_REAL("pretrain.lr", rl.pretrain_lr),
        KW_SIZE("pretrain.epochs", rl.pretrain_epochs),
        KW_SIZE("pretrain.batch", rl.pretrain_batch),
        KW_REAL("pretrain.val_split", rl.pretrain_val_split),
        KW_REAL("benchmark.lr", benchmark.lr),
        KW_SIZE("benchmark.batch", benchmark.batch),
        KW_SIZE("benchmark.max_epochs", benchmark.max_epochs),
        KW_SIZE("benchmark.patience", benchmark.patience),
        KW_REAL("benchmark.val_split", benchmark.val_split),
        KW_SIZE("metrics.rolling_window", rolling_window),
        {"metrics.wall_clock", [](const ExperimentConfig& c) { return fmt(c.wall_clock); },
         [](ExperimentConfig& c, const std::string& v) { c.wall_clock = parse_bool("metrics.wall_clock", v); }},
    };
    return table;
}

#undef KW_SIZE
#undef KW_REAL

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void ExperimentConfig::validate() const
{
    mfcc.validate();
    rl.validate();
    if (!(split.pretrain > 0.0 && split.pretrain < 1.0)) throw ConfigError("data.pretrain_fraction must be in (0, 1)");
    if (!(split.bench_train > 0.0 && split.bench_train < 1.0))
        throw ConfigError("data.bench_train_fraction must be in (0, 1)");
    if (!(benchmark.lr > 0.0)) throw ConfigError("benchmark.lr must be positive");
    if (benchmark.batch == 0 || benchmark.max_epochs == 0 || benchmark.patience == 0)
        throw ConfigError("benchmark.batch, max_epochs and patience must be >= 1");
    if (!(benchmark.val_split > 0.0 && benchmark.val_split < 1.0))
        throw ConfigError("benchmark.val_split must be in (0, 1)");
    if (rolling_window == 0) throw ConfigError("metrics.rolling_window must be >= 1");
    architecture(2).validate();
}

policy::Architecture ExperimentConfig::architecture(std::size_t num_classes) const
{
    policy::Architecture a;
    a.n_mfcc = mfcc.n_mfcc;
    a.n_frames = dsp::frame_count(mfcc.sample_rate, mfcc.hop_length);
    a.num_classes = num_classes;
    a.conv1_filters = model.conv1_filters;
    a.conv2_filters = model.conv2_filters;
    a.kernel_size = model.kernel_size;
    a.pool_window = model.pool_window;
    a.lstm_hidden = model.lstm_hidden;
    a.dense_units = model.dense_units;
    a.dropout_rate = model.dropout_rate;
    return a;
}

std::string ExperimentConfig::to_text() const
{
    std::string out;
    std::string section;
    for (const Field& f : fields()) {
        const std::string key = f.key;
        const std::string sec = key.substr(0, key.find('.'));
        if (sec != section) {
            if (!section.empty()) out += "\n";
            section = sec;
        }
        out += key + " = " + f.get(*this) + "\n";
    }
    return out;
}

void ExperimentConfig::set(const std::string& key, const std::string& value)
{
    for (const Field& f : fields())
        if (key == f.key) {
            f.set(*this, value);
            return;
        }
    throw ConfigError("unknown config key '" + key + "'");
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& origin)
{
    ExperimentConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::string where = origin + ":" + std::to_string(number) + ": ";
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected 'section.key = value'");
        try {
            c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
}

void ExperimentConfig::save(const fs::path& path) const { write_text_file(path, to_text()); }

ExperimentConfig ExperimentConfig::preset(Profile profile)
{
    ExperimentConfig c;
    if (profile == Profile::desk) {
        c.subset = data::SubsetName::binary;
        c.rl.num_episodes = 2000;
        c.model.dense_units = {128, 64, 32};
        c.out_dir = "runs/desk";
        c.wall_clock = false;
    }
    return c;
}

}  // namespace kwsrl::exp
