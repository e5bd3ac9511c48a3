#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kwsrl/features.hpp"
#include "kwsrl/nn/graph.hpp"
#include "kwsrl/nn/optim.hpp"
#include "kwsrl/policy.hpp"
#include "kwsrl/rng.hpp"

namespace kwsrl::rl {

enum class ActionMode { argmax, sample };

ActionMode parse_action_mode(const std::string& name);
std::string to_string(ActionMode mode);

struct RLConfig {
    std::size_t eta = 50;  // steps per episode
    std::size_t num_episodes = 10000;
    double gamma = 0.99;
    std::size_t sync_interval = 200;
    double rl_lr = 1e-4;  // Adam
    double pretrain_lr = 1e-3;  // SGD
    std::size_t pretrain_epochs = 10;
    std::size_t pretrain_batch = 8;
    double pretrain_val_split = 0.10;
    double huber_delta = 1.0;
    std::uint64_t seed = 0;
    ActionMode action_mode = ActionMode::argmax;

    void validate() const;
    bool operator==(const RLConfig&) const = default;
};

// Independent random streams of one run.
enum class Stream : std::uint64_t { init = 1, episodes = 2, dropout = 3, actions = 4, pretrain = 5 };
Rng stream(std::uint64_t seed, Stream s);

// +1 when the action is the true class, -1 otherwise.
int reward(std::size_t action, std::size_t truth);

// G_t = r_t + gamma * G_{t+1}, with G at the last step equal to its reward.
std::vector<double> discounted_returns(std::span<const int> rewards, double gamma);

struct StepResult {
    int reward;
    bool done;
};

// Episodic environment over a pool of labelled states. Each episode walks
// eta items drawn without replacement.
class Environment {
public:
    Environment(std::span<const dsp::LabeledFeatures> pool, std::size_t eta);

    void reset(Rng& rng);
    bool done() const noexcept { return cursor_ == drawn_.size(); }
    std::size_t cursor() const noexcept { return cursor_; }
    std::size_t eta() const noexcept { return eta_; }

    const dsp::FeatureMatrix& state() const;
    std::size_t state_index() const;  // position in the pool
    std::span<const std::size_t> drawn() const noexcept { return drawn_; }
    const dsp::LabeledFeatures& item(std::size_t pool_index) const { return pool_[pool_index]; }

    StepResult step(std::size_t action);

private:
    std::span<const dsp::LabeledFeatures> pool_;
    std::size_t eta_;
    std::vector<std::size_t> order_;  // scratch permutation for the draw
    std::vector<std::size_t> drawn_;
    std::size_t cursor_ = 0;
};

struct EpisodeHistory {
    std::vector<std::size_t> states;  // pool indices (E_s)
    std::vector<std::size_t> actions;  // E_a
    std::vector<int> rewards;  // E_r
    std::vector<double> returns;  // G, filled by finish()

    std::size_t length() const noexcept { return states.size(); }
    void record(std::size_t state, std::size_t action, int r);
    void finish(double gamma);
    std::size_t correct() const;
    int reward_sum() const;
};

// Target sync schedule: due after every `interval`-th completed episode.
class TargetSync {
public:
    explicit TargetSync(std::size_t interval);
    bool due(std::size_t episodes_completed) const noexcept
    {
        return episodes_completed > 0 && episodes_completed % interval_ == 0;
    }
    std::size_t interval() const noexcept { return interval_; }

private:
    std::size_t interval_;
};

// Target-model outputs per pool item; valid until the next sync.
class TargetCache {
public:
    const std::vector<float>* find(std::size_t pool_index) const;
    void store(std::size_t pool_index, std::vector<float> probs);
    void clear() { entries_.clear(); }
    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::unordered_map<std::size_t, std::vector<float>> entries_;
};

using PolicyPair = policy::ModelPair<policy::PolicyParams>;

// Target distributions [n, C] with entry (t, actions[t]) replaced by returns[t].
template <typename T>
nn::Tensor<T> regression_targets(nn::Tensor<T> target_probs, std::span<const std::size_t> actions,
                                 std::span<const double> returns);

// Mean Huber loss between the policy's training-mode distributions for
// `states` [n, frames, n_mfcc] and y_true [n, C].
template <typename T>
nn::Var<T> episode_loss(nn::Graph<T>& g, const policy::Params<T>& params, const nn::Tensor<T>& states,
                        const nn::Tensor<T>& y_true, double delta, Rng* dropout_rng,
                        policy::Params<T>* grad_sinks = nullptr);

// Y_true[t] is the target's distribution for s_t with entry a_t replaced by
// G_t; Y_pred[t] is the policy's distribution with dropout active. The loss
// is the mean Huber error over all entries; one Adam step follows.
double train_episode(PolicyPair& pair, const EpisodeHistory& history, std::span<const dsp::LabeledFeatures> pool,
                     const RLConfig& config, nn::Optimizer<float>& optimizer, Rng& dropout_rng,
                     TargetCache* cache = nullptr);

struct EpisodeOutcome {
    std::size_t episode = 0;  // 1-based
    std::size_t correct = 0;
    std::size_t eta = 0;
    int reward_sum = 0;
    double accuracy = 0.0;  // H_i = correct / eta
    double loss = 0.0;
    bool synced = false;  // target synced after this episode
};

// Runs episodes one at a time: draw, act on every state, train, sync.
class Trainer {
public:
    Trainer(const RLConfig& config, policy::PolicyParams initial, std::span<const dsp::LabeledFeatures> pool);

    EpisodeOutcome run_episode();
    std::size_t episodes_done() const noexcept { return episodes_; }

    const PolicyPair& models() const noexcept { return pair_; }
    const EpisodeHistory& last_history() const noexcept { return history_; }

    // Policy distributions in inference mode.
    nn::Tensor<float> predict(std::span<const dsp::FeatureMatrix* const> states) const;

private:
    std::vector<std::size_t> choose_actions(std::span<const std::size_t> drawn);

    RLConfig config_;
    std::span<const dsp::LabeledFeatures> pool_;
    PolicyPair pair_;
    nn::Optimizer<float> optimizer_;
    Environment env_;
    TargetSync sync_;
    TargetCache cache_;
    Rng episode_rng_, dropout_rng_, action_rng_;
    EpisodeHistory history_;
    std::size_t episodes_ = 0;
};

// Trains for config.num_episodes, reporting every episode. A non-finite
// loss aborts with NumericError.
void run(const RLConfig& config, policy::PolicyParams initial, std::span<const dsp::LabeledFeatures> pool,
         const std::function<void(const EpisodeOutcome&)>& on_episode);

struct EpochMetrics {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;  // NaN without a validation set
    double val_accuracy = 0.0;
};

struct SupervisedResult {
    policy::PolicyParams params;
    std::vector<EpochMetrics> epochs;
};

// [begin, end) index ranges of consecutive batches; the last may be short.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t count, std::size_t batch);

// Mean cross-entropy and accuracy of the inference-mode network.
std::pair<double, double> evaluate(const policy::PolicyParams& params, std::span<const dsp::LabeledFeatures> data,
                                   std::span<const std::size_t> indices, std::size_t batch = 64);

// One epoch of minibatch SGD over `indices` in the given order. Returns
// (mean loss, accuracy) over the epoch's training-mode predictions.
std::pair<double, double> sgd_epoch(policy::PolicyParams& params, std::span<const dsp::LabeledFeatures> data,
                                    std::span<const std::size_t> indices, std::size_t batch,
                                    nn::Optimizer<float>& optimizer, Rng& dropout_rng);

// Supervised warm start: SGD on cross-entropy with a stratified validation
// hold-out. Returns the final-epoch parameters. Every class of the
// architecture must be present.
SupervisedResult pretrain(policy::PolicyParams initial, std::span<const dsp::LabeledFeatures> data,
                          const RLConfig& config,
                          const std::function<void(const EpochMetrics&)>& on_epoch = {});

}  // namespace kwsrl::rl
