#include "kwsrl/rl.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "kwsrl/dataset.hpp"
#include "kwsrl/error.hpp"
#include "kwsrl/nn/ops.hpp"

namespace kwsrl::rl {

using policy::PolicyParams;

ActionMode parse_action_mode(const std::string& name)
{
    if (name == "argmax") return ActionMode::argmax;
    if (name == "sample") return ActionMode::sample;
    throw ConfigError("unknown action mode '" + name + "' (argmax|sample)");
}

std::string to_string(ActionMode mode) { return mode == ActionMode::argmax ? "argmax" : "sample"; }

void RLConfig::validate() const
{
    if (eta < 1) throw ConfigError("rl: eta must be >= 1");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("rl: gamma must be in [0, 1]");
    if (sync_interval < 1) throw ConfigError("rl: sync_interval must be >= 1");
    if (!(rl_lr > 0.0) || !(pretrain_lr > 0.0)) throw ConfigError("rl: learning rates must be positive");
    if (pretrain_batch < 1) throw ConfigError("rl: pretrain_batch must be >= 1");
    if (!(pretrain_val_split >= 0.0 && pretrain_val_split < 1.0))
        throw ConfigError("rl: pretrain_val_split must be in [0, 1)");
    if (!(huber_delta > 0.0)) throw ConfigError("rl: huber_delta must be positive");
}

Rng stream(std::uint64_t seed, Stream s) { return Rng::derive(seed, static_cast<std::uint64_t>(s)); }

int reward(std::size_t action, std::size_t truth) { return action == truth ? 1 : -1; }

std::vector<double> discounted_returns(std::span<const int> rewards, double gamma)
{
    if (rewards.empty()) throw LogicError("discounted_returns: empty reward sequence");
    std::vector<double> g(rewards.size());
    double next = 0.0;
    for (std::size_t t = rewards.size(); t-- > 0;) {
        next = rewards[t] + gamma * next;
        g[t] = next;
    }
    return g;
}

Environment::Environment(std::span<const dsp::LabeledFeatures> pool, std::size_t eta) : pool_(pool), eta_(eta)
{
    if (eta == 0) throw ConfigError("environment: eta must be >= 1");
    if (pool.size() < eta)
        throw DatasetError("environment: pool of " + std::to_string(pool.size()) + " items is smaller than eta = " +
                           std::to_string(eta));
}

void Environment::reset(Rng& rng)
{
    order_.resize(pool_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    // partial Fisher-Yates: the first eta slots are a uniform draw without replacement
    for (std::size_t i = 0; i < eta_; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(order_.size() - i));
        std::swap(order_[i], order_[j]);
    }
    drawn_.assign(order_.begin(), order_.begin() + static_cast<std::ptrdiff_t>(eta_));
    cursor_ = 0;
}

const dsp::FeatureMatrix& Environment::state() const { return pool_[state_index()].features; }

std::size_t Environment::state_index() const
{
    if (done()) throw LogicError("environment: no current state, episode is done");
    return drawn_[cursor_];
}

StepResult Environment::step(std::size_t action)
{
    if (drawn_.empty()) throw LogicError("environment: step before reset");
    if (done()) throw LogicError("environment: step after the episode ended");
    const int r = reward(action, pool_[drawn_[cursor_]].label);
    ++cursor_;
    return {r, done()};
}

void EpisodeHistory::record(std::size_t state, std::size_t action, int r)
{
    states.push_back(state);
    actions.push_back(action);
    rewards.push_back(r);
}

void EpisodeHistory::finish(double gamma) { returns = discounted_returns(rewards, gamma); }

std::size_t EpisodeHistory::correct() const
{
    std::size_t n = 0;
    for (int r : rewards) n += r > 0;
    return n;
}

int EpisodeHistory::reward_sum() const { return std::accumulate(rewards.begin(), rewards.end(), 0); }

TargetSync::TargetSync(std::size_t interval) : interval_(interval)
{
    if (interval == 0) throw ConfigError("sync interval must be >= 1");
}

const std::vector<float>* TargetCache::find(std::size_t pool_index) const
{
    auto it = entries_.find(pool_index);
    return it == entries_.end() ? nullptr : &it->second;
}

void TargetCache::store(std::size_t pool_index, std::vector<float> probs)
{
    entries_[pool_index] = std::move(probs);
}

namespace {

std::vector<const dsp::FeatureMatrix*> gather(std::span<const dsp::LabeledFeatures> pool,
                                              std::span<const std::size_t> indices)
{
    std::vector<const dsp::FeatureMatrix*> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(&pool[i].features);
    return out;
}

// Target distributions [n, classes] for the given pool items.
nn::Tensor<float> target_outputs(const PolicyParams& target, std::span<const dsp::LabeledFeatures> pool,
                                 std::span<const std::size_t> indices, TargetCache* cache)
{
    const std::size_t classes = target.arch.num_classes;
    nn::Tensor<float> out({indices.size(), classes});
    std::vector<std::size_t> missing, slots;
    for (std::size_t t = 0; t < indices.size(); ++t) {
        const std::vector<float>* hit = cache ? cache->find(indices[t]) : nullptr;
        if (hit)
            std::copy(hit->begin(), hit->end(), out.data().begin() + static_cast<std::ptrdiff_t>(t * classes));
        else {
            missing.push_back(indices[t]);
            slots.push_back(t);
        }
    }
    if (missing.empty()) return out;
    const auto probs = policy::forward_batch(target, gather(pool, missing), false, nullptr);
    for (std::size_t m = 0; m < missing.size(); ++m) {
        const auto row = probs.data().subspan(m * classes, classes);
        std::copy(row.begin(), row.end(), out.data().begin() + static_cast<std::ptrdiff_t>(slots[m] * classes));
        if (cache) cache->store(missing[m], std::vector<float>(row.begin(), row.end()));
    }
    return out;
}

void apply_step(PolicyParams& params, PolicyParams& grads, nn::Optimizer<float>& optimizer)
{
    std::vector<nn::Tensor<float>*> p;
    std::vector<const nn::Tensor<float>*> g;
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        p.push_back(&params.tensors[i]);
        g.push_back(&grads.tensors[i]);
    }
    optimizer.step(p, g);
}

}  // namespace

template <typename T>
nn::Tensor<T> regression_targets(nn::Tensor<T> target_probs, std::span<const std::size_t> actions,
                                 std::span<const double> returns)
{
    if (target_probs.rank() != 2 || target_probs.dim(0) != actions.size() || returns.size() != actions.size())
        throw ShapeError("regression_targets: " + nn::shape_string(target_probs.shape()) + " outputs for " +
                         std::to_string(actions.size()) + " actions and " + std::to_string(returns.size()) +
                         " returns");
    for (std::size_t t = 0; t < actions.size(); ++t) {
        if (actions[t] >= target_probs.dim(1)) throw LogicError("regression_targets: action out of range");
        target_probs.at(t, actions[t]) = static_cast<T>(returns[t]);
    }
    return target_probs;
}

template <typename T>
nn::Var<T> episode_loss(nn::Graph<T>& g, const policy::Params<T>& params, const nn::Tensor<T>& states,
                        const nn::Tensor<T>& y_true, double delta, Rng* dropout_rng, policy::Params<T>* grad_sinks)
{
    const auto out = policy::build_network<T>(g, params, states, true, dropout_rng, grad_sinks);
    return nn::huber(out.probs, y_true, delta);
}

double train_episode(PolicyPair& pair, const EpisodeHistory& history, std::span<const dsp::LabeledFeatures> pool,
                     const RLConfig& config, nn::Optimizer<float>& optimizer, Rng& dropout_rng, TargetCache* cache)
{
    const std::size_t n = history.length();
    if (n == 0 || n != config.eta || history.actions.size() != n || history.rewards.size() != n ||
        history.returns.size() != n)
        throw LogicError("train_episode: history holds " + std::to_string(n) + " of " + std::to_string(config.eta) +
                         " steps or lacks returns");

    const auto y_true = regression_targets(target_outputs(pair.target(), pool, history.states, cache),
                                           std::span<const std::size_t>(history.actions),
                                           std::span<const double>(history.returns));
    PolicyParams grads = PolicyParams::zeros(pair.policy().arch);
    nn::Graph<float> g;
    const auto loss = episode_loss<float>(g, pair.policy(), policy::state_batch<float>(gather(pool, history.states)),
                                          y_true, config.huber_delta, &dropout_rng, &grads);
    const double value = loss.value()[0];
    if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite episode loss " << value << " (reward sum " << history.reward_sum() << ", first return "
            << history.returns.front() << ")";
        throw NumericError(msg.str());
    }
    g.backward(loss);
    apply_step(pair.policy(), grads, optimizer);
    return value;
}

template nn::Tensor<float> regression_targets<float>(nn::Tensor<float>, std::span<const std::size_t>,
                                                     std::span<const double>);
template nn::Tensor<double> regression_targets<double>(nn::Tensor<double>, std::span<const std::size_t>,
                                                       std::span<const double>);
template nn::Var<float> episode_loss<float>(nn::Graph<float>&, const policy::Params<float>&, const nn::Tensor<float>&,
                                            const nn::Tensor<float>&, double, Rng*, policy::Params<float>*);
template nn::Var<double> episode_loss<double>(nn::Graph<double>&, const policy::Params<double>&,
                                              const nn::Tensor<double>&, const nn::Tensor<double>&, double, Rng*,
                                              policy::Params<double>*);

Trainer::Trainer(const RLConfig& config, PolicyParams initial, std::span<const dsp::LabeledFeatures> pool)
    : config_(config),
      pool_(pool),
      pair_(std::move(initial)),
      optimizer_(nn::Optimizer<float>::adam(config.rl_lr)),
      env_(pool, config.eta),
      sync_(config.sync_interval),
      episode_rng_(stream(config.seed, Stream::episodes)),
      dropout_rng_(stream(config.seed, Stream::dropout)),
      action_rng_(stream(config.seed, Stream::actions))
{
    config_.validate();
    for (const auto& item : pool)
        if (item.label >= pair_.policy().arch.num_classes)
            throw DatasetError("rl pool label " + std::to_string(item.label) + " exceeds the model's " +
                               std::to_string(pair_.policy().arch.num_classes) + " classes");
}

nn::Tensor<float> Trainer::predict(std::span<const dsp::FeatureMatrix* const> states) const
{
    return policy::forward_batch(pair_.policy(), states, false, nullptr);
}

std::vector<std::size_t> Trainer::choose_actions(std::span<const std::size_t> drawn)
{
    // The policy is fixed within an episode, so every state of the draw can
    // be scored in one pass.
    const auto probs = predict(gather(pool_, drawn));
    const std::size_t classes = probs.dim(1);
    std::vector<std::size_t> actions(drawn.size());
    for (std::size_t t = 0; t < drawn.size(); ++t) {
        const auto row = probs.data().subspan(t * classes, classes);
        if (config_.action_mode == ActionMode::argmax) {
            actions[t] = policy::argmax(row);
            continue;
        }
        double u = action_rng_.uniform(), acc = 0.0;
        actions[t] = classes - 1;
        for (std::size_t c = 0; c < classes; ++c) {
            acc += row[c];
            if (u < acc) {
                actions[t] = c;
                break;
            }
        }
    }
    return actions;
}

EpisodeOutcome Trainer::run_episode()
{
    env_.reset(episode_rng_);
    const std::vector<std::size_t> actions = choose_actions(env_.drawn());
    history_ = EpisodeHistory{};
    for (std::size_t t = 0; !env_.done(); ++t) {
        const std::size_t s = env_.state_index();
        const StepResult r = env_.step(actions[t]);
        history_.record(s, actions[t], r.reward);
    }
    history_.finish(config_.gamma);

    EpisodeOutcome out;
    out.episode = ++episodes_;
    out.eta = config_.eta;
    out.correct = history_.correct();
    out.reward_sum = history_.reward_sum();
    out.accuracy = static_cast<double>(out.correct) / static_cast<double>(out.eta);
    if (out.accuracy != (out.reward_sum + static_cast<double>(out.eta)) / (2.0 * static_cast<double>(out.eta)))
        throw LogicError("episode accuracy disagrees with its reward sum");
    try {
        out.loss = train_episode(pair_, history_, pool_, config_, optimizer_, dropout_rng_, &cache_);
    } catch (const NumericError& e) {
        throw NumericError("episode " + std::to_string(out.episode) + ": " + e.what());
    }
    if (sync_.due(episodes_)) {
        pair_.sync();
        cache_.clear();
        out.synced = true;
    }
    return out;
}

void run(const RLConfig& config, PolicyParams initial, std::span<const dsp::LabeledFeatures> pool,
         const std::function<void(const EpisodeOutcome&)>& on_episode)
{
    Trainer trainer(config, std::move(initial), pool);
    for (std::size_t e = 0; e < config.num_episodes; ++e) {
        const EpisodeOutcome out = trainer.run_episode();
        if (on_episode) on_episode(out);
    }
}

std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t count, std::size_t batch)
{
    if (batch == 0) throw ConfigError("batch size must be >= 1");
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t b = 0; b < count; b += batch) out.emplace_back(b, std::min(count, b + batch));
    return out;
}

namespace {

std::size_t count_correct(const nn::Tensor<float>& probs, std::span<const std::size_t> labels)
{
    const std::size_t classes = probs.dim(1);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < labels.size(); ++r)
        correct += policy::argmax(probs.data().subspan(r * classes, classes)) == labels[r];
    return correct;
}

}  // namespace

std::pair<double, double> evaluate(const PolicyParams& params, std::span<const dsp::LabeledFeatures> data,
                                   std::span<const std::size_t> indices, std::size_t batch)
{
    if (indices.empty()) return {std::nan(""), std::nan("")};
    double loss = 0.0;
    std::size_t correct = 0;
    for (const auto& [b, e] : batch_ranges(indices.size(), batch)) {
        const auto idx = indices.subspan(b, e - b);
        std::vector<std::size_t> labels;
        for (std::size_t i : idx) labels.push_back(data[i].label);
        nn::Graph<float> g;
        const auto out = policy::build_network<float>(g, params, policy::state_batch<float>(gather(data, idx)), false,
                                                      nullptr);
        loss += nn::cross_entropy(out.probs, std::span<const std::size_t>(labels)).value()[0] *
                static_cast<double>(idx.size());
        correct += count_correct(out.probs.value(), labels);
    }
    const double n = static_cast<double>(indices.size());
    return {loss / n, static_cast<double>(correct) / n};
}

std::pair<double, double> sgd_epoch(PolicyParams& params, std::span<const dsp::LabeledFeatures> data,
                                    std::span<const std::size_t> indices, std::size_t batch,
                                    nn::Optimizer<float>& optimizer, Rng& dropout_rng)
{
    double loss = 0.0;
    std::size_t correct = 0;
    for (const auto& [b, e] : batch_ranges(indices.size(), batch)) {
        const auto idx = indices.subspan(b, e - b);
        std::vector<std::size_t> labels;
        for (std::size_t i : idx) labels.push_back(data[i].label);
        PolicyParams grads = PolicyParams::zeros(params.arch);
        nn::Graph<float> g;
        const auto out = policy::build_network<float>(g, params, policy::state_batch<float>(gather(data, idx)), true,
                                                      &dropout_rng, &grads);
        const auto ce = nn::cross_entropy(out.probs, std::span<const std::size_t>(labels));
        const double value = ce.value()[0];
        if (!std::isfinite(value)) throw NumericError("supervised training: non-finite loss");
        loss += value * static_cast<double>(idx.size());
        correct += count_correct(out.probs.value(), labels);
        g.backward(ce);
        apply_step(params, grads, optimizer);
    }
    const double n = static_cast<double>(indices.size());
    return {loss / n, static_cast<double>(correct) / n};
}

SupervisedResult pretrain(PolicyParams initial, std::span<const dsp::LabeledFeatures> data, const RLConfig& config,
                          const std::function<void(const EpochMetrics&)>& on_epoch)
{
    config.validate();
    const std::size_t classes = initial.arch.num_classes;
    if (data.empty()) throw DatasetError("pretrain: empty training set");
    std::vector<std::size_t> per_class(classes, 0);
    for (const auto& item : data) {
        if (item.label >= classes) throw DatasetError("pretrain: label out of range");
        ++per_class[item.label];
    }
    for (std::size_t c = 0; c < classes; ++c)
        if (per_class[c] == 0) throw DatasetError("pretrain: class " + std::to_string(c) + " has no examples");

    std::vector<std::size_t> train(data.size()), val;
    std::iota(train.begin(), train.end(), std::size_t{0});
    if (config.pretrain_val_split > 0.0) {
        std::vector<std::string> keys;
        std::vector<std::size_t> labels;
        for (std::size_t i = 0; i < data.size(); ++i) {
            keys.push_back(std::to_string(i));
            labels.push_back(data[i].label);
        }
        auto parts = data::stratified_split(keys, labels, 1.0 - config.pretrain_val_split, config.seed);
        train = std::move(parts.first);
        val = std::move(parts.second);
    }

    SupervisedResult result{std::move(initial), {}};
    auto optimizer = nn::Optimizer<float>::sgd(config.pretrain_lr);
    Rng shuffle_rng = stream(config.seed, Stream::pretrain);
    Rng dropout_rng = Rng::derive(config.seed ^ 0x7072657472ULL, static_cast<std::uint64_t>(Stream::dropout));
    for (std::size_t epoch = 1; epoch <= config.pretrain_epochs; ++epoch) {
        shuffle_rng.shuffle(std::span<std::size_t>(train));
        EpochMetrics m;
        m.epoch = epoch;
        std::tie(m.train_loss, m.train_accuracy) =
            sgd_epoch(result.params, data, train, config.pretrain_batch, optimizer, dropout_rng);
        std::tie(m.val_loss, m.val_accuracy) = evaluate(result.params, data, val);
        result.epochs.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    return result;
}

}  // namespace kwsrl::rl
