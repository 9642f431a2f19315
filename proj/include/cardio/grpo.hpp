#pragma once

// Group relative policy optimization on tabular softmax policies over the
// answer letters A-E. Rewards come from answer extraction on sampled texts.

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cardio::grpo {

inline constexpr std::size_t kActions = 5;
using Logits = std::array<double, kActions>;

inline char letter(std::size_t action) { return static_cast<char>('A' + action); }

struct TabularPolicy {
  std::map<std::string, Logits> logits;  // context id -> logits over A-E
  double temperature = 1.0;

  /// Uniform logits (zeros) for every id.
  static TabularPolicy uniform(const std::vector<std::string>& context_ids, double temperature = 1.0);

  Logits probs(const std::string& context) const;
  Logits log_probs(const std::string& context) const;

  /// Throws std::invalid_argument on non-finite logits or temperature <= 0.
  void validate() const;
};

struct GrpoConfig {
  std::size_t group_size = 4;
  double kl_coeff = 0.01;
  double clip_epsilon = 0.2;
  // The large-model value is 1.0e-6; tabular logits need a far larger step.
  double learning_rate = 0.5;
  std::size_t epochs = 15;         // passes over the context set in train()
  std::size_t batch_size = 0;      // contexts per step, 0 = all
  std::size_t inner_updates = 1;   // gradient steps per sampled batch
  std::uint64_t seed = 42;

  void validate() const;
};

struct TrainingContext {
  std::string id;
  char truth = 'A';
};

struct RolloutGroup {
  std::string context_id;
  char truth = 'A';
  std::vector<std::string> responses;
  std::vector<std::size_t> actions;
  std::vector<double> old_logprobs;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

/// 1.0 when the extracted letter equals `truth`, else 0.0.
double reward(std::string_view response, char truth);

/// r_i - mean(r). Throws std::invalid_argument for fewer than 2 rewards.
std::vector<double> group_advantages(const std::vector<double>& rewards);

/// -min(ratio * a, clip(ratio, 1 - eps, 1 + eps) * a) with ratio = exp(logp_new - logp_old).
double clipped_surrogate(double advantage, double logp_new, double logp_old, double epsilon);

/// r - 1 - log r with r = exp(logp_ref - logp_policy).
double kl_low_var(double logp_policy, double logp_ref);

/// Portable sampling: u = (next() >> 11) * 2^-53, then inverse CDF.
std::size_t sample_action(const Logits& probs, std::mt19937_64& rng);

std::vector<RolloutGroup> sample_groups(const TabularPolicy& policy, const std::vector<TrainingContext>& contexts,
                                        const GrpoConfig& cfg, std::mt19937_64& rng);

struct Objective {
  double loss = 0.0;       // surrogate + kl_coeff * kl
  double surrogate = 0.0;  // mean over all samples
  double kl = 0.0;         // mean over all samples
  double clip_fraction = 0.0;
};

/// Loss of `policy` on frozen groups.
Objective objective(const TabularPolicy& policy, const TabularPolicy& reference, const std::vector<RolloutGroup>& groups,
                    const GrpoConfig& cfg);

using Gradient = std::map<std::string, Logits>;

/// Analytic d(loss)/d(logits) on frozen groups.
Gradient gradient(const TabularPolicy& policy, const TabularPolicy& reference, const std::vector<RolloutGroup>& groups,
                  const GrpoConfig& cfg);

/// Max relative error between gradient() and central differences with step
/// h. Components where both are below 1e-8 in magnitude count as exact.
double finite_diff_check(const TabularPolicy& policy, const TabularPolicy& reference,
                         const std::vector<RolloutGroup>& groups, const GrpoConfig& cfg, double h = 1e-5);

struct StepMetrics {
  std::size_t step = 0;
  double mean_reward = 0.0;      // over sampled responses
  double kl = 0.0;
  double clip_fraction = 0.0;
  double loss = 0.0;
  double expected_reward = 0.0;  // mean over contexts of pi(truth) after the update
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepResult {
  TabularPolicy policy;
  StepMetrics metrics;
};

/// One GRPO update: sample groups, then `inner_updates` gradient steps on them.
StepResult train_step(const TabularPolicy& policy, const TabularPolicy& reference,
                      const std::vector<TrainingContext>& batch, const GrpoConfig& cfg, std::mt19937_64& rng);

double expected_reward(const TabularPolicy& policy, const std::vector<TrainingContext>& contexts);

/// Runs `steps` updates (0: cfg.epochs passes over `contexts`) from a copy of
/// `reference`. Deterministic given cfg.seed.
struct TrainingRun {
  TabularPolicy policy;
  std::vector<StepMetrics> metrics;
};
TrainingRun train(const TabularPolicy& reference, const std::vector<TrainingContext>& contexts, const GrpoConfig& cfg,
                  std::size_t steps = 0);

/// CSV with header step,mean_reward,kl,clip_fraction,loss,expected_reward.
std::string metrics_csv(const std::vector<StepMetrics>& metrics);

}  // namespace cardio::grpo
