#include "cardio/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "cardio/eval.hpp"

namespace cardio::grpo {

TabularPolicy TabularPolicy::uniform(const std::vector<std::string>& context_ids, double temperature) {
  TabularPolicy p;
  p.temperature = temperature;
  for (const auto& id : context_ids) p.logits[id] = Logits{};
  return p;
}

Logits TabularPolicy::log_probs(const std::string& context) const {
  auto it = logits.find(context);
  if (it == logits.end()) throw std::out_of_range(fmt::format("policy has no context '{}'", context));
  Logits z;
  for (std::size_t k = 0; k < kActions; ++k) z[k] = it->second[k] / temperature;
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  for (auto& v : z) v -= lse;
  return z;
}

Logits TabularPolicy::probs(const std::string& context) const {
  auto lp = log_probs(context);
  for (auto& v : lp) v = std::exp(v);
  return lp;
}

void TabularPolicy::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("policy temperature must be positive and finite");
  }
  for (const auto& [id, l] : logits) {
    for (double v : l) {
      if (!std::isfinite(v)) throw std::invalid_argument(fmt::format("non-finite logit in context '{}'", id));
    }
  }
}

void GrpoConfig::validate() const {
  if (group_size < 2) throw std::invalid_argument("group_size must be at least 2");
  if (!(clip_epsilon > 0.0)) throw std::invalid_argument("clip_epsilon must be positive");
  if (!(kl_coeff >= 0.0)) throw std::invalid_argument("kl_coeff must be non-negative");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (inner_updates == 0) throw std::invalid_argument("inner_updates must be at least 1");
}

double reward(std::string_view response, char truth) {
  const auto choice = eval::extract_choice(response);
  return choice && *choice == truth ? 1.0 : 0.0;
}

std::vector<double> group_advantages(const std::vector<double>& rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("group_advantages: need at least 2 rewards");
  const double m = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
  std::vector<double> a;
  a.reserve(rewards.size());
  for (double r : rewards) a.push_back(r - m);
  return a;
}

double clipped_surrogate(double advantage, double logp_new, double logp_old, double epsilon) {
  const double ratio = std::exp(logp_new - logp_old);
  const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
  return -std::min(ratio * advantage, clipped * advantage);
}

double kl_low_var(double logp_policy, double logp_ref) {
  const double log_r = logp_ref - logp_policy;
  return std::exp(log_r) - 1.0 - log_r;
}

std::size_t sample_action(const Logits& probs, std::mt19937_64& rng) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  double cdf = 0.0;
  for (std::size_t k = 0; k < kActions; ++k) {
    cdf += probs[k];
    if (u < cdf) return k;
  }
  // Rounding left u above the accumulated mass: take the last action with mass.
  for (std::size_t k = kActions; k-- > 0;) {
    if (probs[k] > 0.0) return k;
  }
  return kActions - 1;
}

std::vector<RolloutGroup> sample_groups(const TabularPolicy& policy, const std::vector<TrainingContext>& contexts,
                                        const GrpoConfig& cfg, std::mt19937_64& rng) {
  std::vector<RolloutGroup> groups;
  for (const auto& ctx : contexts) {
    RolloutGroup g;
    g.context_id = ctx.id;
    g.truth = ctx.truth;
    const auto p = policy.probs(ctx.id);
    const auto lp = policy.log_probs(ctx.id);
    for (std::size_t i = 0; i < cfg.group_size; ++i) {
      const auto a = sample_action(p, rng);
      g.actions.push_back(a);
      g.responses.push_back(fmt::format("The answer is {}", letter(a)));
      g.old_logprobs.push_back(lp[a]);
      g.rewards.push_back(reward(g.responses.back(), ctx.truth));
    }
    g.advantages = group_advantages(g.rewards);
    groups.push_back(std::move(g));
  }
  return groups;
}

namespace {

std::size_t sample_count(const std::vector<RolloutGroup>& groups) {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.actions.size();
  return n;
}

}  // namespace

Objective objective(const TabularPolicy& policy, const TabularPolicy& reference, const std::vector<RolloutGroup>& groups,
                    const GrpoConfig& cfg) {
  Objective out;
  const auto n = sample_count(groups);
  if (n == 0) return out;
  std::size_t clipped = 0;
  for (const auto& g : groups) {
    const auto lp = policy.log_probs(g.context_id);
    const auto lr = reference.log_probs(g.context_id);
    for (std::size_t i = 0; i < g.actions.size(); ++i) {
      const auto a = g.actions[i];
      out.surrogate += clipped_surrogate(g.advantages[i], lp[a], g.old_logprobs[i], cfg.clip_epsilon);
      out.kl += kl_low_var(lp[a], lr[a]);
      const double ratio = std::exp(lp[a] - g.old_logprobs[i]);
      if (ratio < 1.0 - cfg.clip_epsilon || ratio > 1.0 + cfg.clip_epsilon) ++clipped;
    }
  }
  const double dn = static_cast<double>(n);
  out.surrogate /= dn;
  out.kl /= dn;
  out.loss = out.surrogate + cfg.kl_coeff * out.kl;
  out.clip_fraction = static_cast<double>(clipped) / dn;
  return out;
}

Gradient gradient(const TabularPolicy& policy, const TabularPolicy& reference, const std::vector<RolloutGroup>& groups,
                  const GrpoConfig& cfg) {
  Gradient grad;
  for (const auto& [id, _] : policy.logits) grad[id] = Logits{};
  const auto n = sample_count(groups);
  if (n == 0) return grad;
  const double dn = static_cast<double>(n);
  for (const auto& g : groups) {
    const auto lp = policy.log_probs(g.context_id);
    const auto lr = reference.log_probs(g.context_id);
    const auto p = policy.probs(g.context_id);
    auto& out = grad[g.context_id];
    for (std::size_t i = 0; i < g.actions.size(); ++i) {
      const auto a = g.actions[i];
      const double adv = g.advantages[i];
      const double ratio = std::exp(lp[a] - g.old_logprobs[i]);
      // d(surrogate)/d(logp_new): the clipped branch is flat.
      const bool flat = (adv > 0.0 && ratio > 1.0 + cfg.clip_epsilon) || (adv < 0.0 && ratio < 1.0 - cfg.clip_epsilon);
      const double d_surr = flat ? 0.0 : -ratio * adv;
      const double d_kl = 1.0 - std::exp(lr[a] - lp[a]);
      const double d_logp = (d_surr + cfg.kl_coeff * d_kl) / dn;
      for (std::size_t j = 0; j < kActions; ++j) {
        out[j] += d_logp * ((j == a ? 1.0 : 0.0) - p[j]) / policy.temperature;
      }
    }
  }
  return grad;
}

double finite_diff_check(const TabularPolicy& policy, const TabularPolicy& reference,
                         const std::vector<RolloutGroup>& groups, const GrpoConfig& cfg, double h) {
  const auto analytic = gradient(policy, reference, groups, cfg);
  double worst = 0.0;
  for (const auto& [id, g] : analytic) {
    for (std::size_t j = 0; j < kActions; ++j) {
      auto plus = policy;
      auto minus = policy;
      plus.logits[id][j] += h;
      minus.logits[id][j] -= h;
      const double numeric =
          (objective(plus, reference, groups, cfg).loss - objective(minus, reference, groups, cfg).loss) / (2.0 * h);
      const double scale = std::max(std::abs(g[j]), std::abs(numeric));
      if (scale < 1e-8) continue;
      worst = std::max(worst, std::abs(g[j] - numeric) / scale);
    }
  }
  return worst;
}

double expected_reward(const TabularPolicy& policy, const std::vector<TrainingContext>& contexts) {
  if (contexts.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : contexts) s += policy.probs(c.id)[static_cast<std::size_t>(c.truth - 'A')];
  return s / static_cast<double>(contexts.size());
}

StepResult train_step(const TabularPolicy& policy, const TabularPolicy& reference,
                      const std::vector<TrainingContext>& batch, const GrpoConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  policy.validate();
  for (const auto& c : batch) {
    if (c.truth < 'A' || c.truth > 'E') {
      throw std::invalid_argument(fmt::format("context '{}': truth label must be A-E", c.id));
    }
  }
  StepResult out{policy, {}};
  const auto groups = sample_groups(policy, batch, cfg, rng);

  double reward_sum = 0.0;
  for (const auto& g : groups) reward_sum += std::accumulate(g.rewards.begin(), g.rewards.end(), 0.0);
  out.metrics.mean_reward = reward_sum / static_cast<double>(sample_count(groups));

  for (std::size_t u = 0; u < cfg.inner_updates; ++u) {
    const auto obj = objective(out.policy, reference, groups, cfg);
    if (!std::isfinite(obj.loss)) {
      std::string detail;
      for (const auto& [id, l] : out.policy.logits) {
        detail += fmt::format(" {}=[{:.6g}, {:.6g}, {:.6g}, {:.6g}, {:.6g}]", id, l[0], l[1], l[2], l[3], l[4]);
      }
      throw NonFiniteLoss(fmt::format("non-finite loss (surrogate {}, kl {}) at inner update {};{}", obj.surrogate,
                                      obj.kl, u, detail));
    }
    if (u == 0) {
      out.metrics.loss = obj.loss;
      out.metrics.kl = obj.kl;
    }
    out.metrics.clip_fraction = obj.clip_fraction;
    const auto grad = gradient(out.policy, reference, groups, cfg);
    for (const auto& [id, g] : grad) {
      auto& l = out.policy.logits[id];
      for (std::size_t j = 0; j < kActions; ++j) l[j] -= cfg.learning_rate * g[j];
    }
  }
  out.metrics.expected_reward = expected_reward(out.policy, batch);
  return out;
}

TrainingRun train(const TabularPolicy& reference, const std::vector<TrainingContext>& contexts, const GrpoConfig& cfg,
                  std::size_t steps) {
  cfg.validate();
  if (contexts.empty()) throw std::invalid_argument("train: no contexts");
  TrainingRun run{reference, {}};
  std::mt19937_64 rng(cfg.seed);
  const std::size_t batch = cfg.batch_size == 0 ? contexts.size() : std::min(cfg.batch_size, contexts.size());
  const std::size_t per_epoch = (contexts.size() + batch - 1) / batch;
  const std::size_t total = steps == 0 ? cfg.epochs * per_epoch : steps;
  for (std::size_t s = 0; s < total; ++s) {
    const std::size_t begin = (s % per_epoch) * batch;
    const std::size_t end = std::min(begin + batch, contexts.size());
    const std::vector<TrainingContext> slice(contexts.begin() + static_cast<std::ptrdiff_t>(begin),
                                             contexts.begin() + static_cast<std::ptrdiff_t>(end));
    auto r = train_step(run.policy, reference, slice, cfg, rng);
    run.policy = std::move(r.policy);
    r.metrics.step = s + 1;
    r.metrics.expected_reward = expected_reward(run.policy, contexts);
    run.metrics.push_back(r.metrics);
  }
  return run;
}

std::string metrics_csv(const std::vector<StepMetrics>& metrics) {
  std::string out = "step,mean_reward,kl,clip_fraction,loss,expected_reward\n";
  for (const auto& m : metrics) {
    out += fmt::format("{},{:.6f},{:.8f},{:.6f},{:.8f},{:.6f}\n", m.step, m.mean_reward, m.kl, m.clip_fraction, m.loss,
                       m.expected_reward);
  }
  return out;
}

}  // namespace cardio::grpo
