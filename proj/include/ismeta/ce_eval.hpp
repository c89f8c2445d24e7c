#pragma once

// Cross-entropy search for the evaluation proposal mean and the importance
// sampling estimator of naturalistic outcome rates.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ismeta/distributions.hpp"
#include "ismeta/policies.hpp"
#include "ismeta/rollout.hpp"
#include "ismeta/simulator.hpp"

namespace ismeta {

struct CeConfig {
    double mu0 = 0.0;
    double sigma = 0.5;
    int n_samples = 500;
    double elite_quantile = 0.10;
    double threshold = 0.01;
    int max_iterations = 50;
    std::uint64_t seed = 0;
    /// Episodes averaged per sampled β.
    int repeats = 1;
    std::size_t jobs = 1;

    void validate() const;
};

struct CeIteration {
    int iteration = 0;
    double mu = 0.0;       // proposal mean used for this iteration
    double next_mu = 0.0;  // elite mean of β
    double elite_mean_reward = 0.0;
    double elite_threshold = 0.0;
    std::size_t elite_count = 0;
};

struct CeResult {
    double mu = 0.0;
    std::vector<CeIteration> trace;
    bool converged = false;
};

/// Reward of one episode at β; the seed identifies the episode.
using RewardSampler = std::function<double(double beta, std::uint64_t seed)>;

CeResult ce_optimize(const RewardSampler& objective, const CeConfig& cfg);

/// Ego return of one rollout against the meta-policy.
RewardSampler episode_reward_sampler(const Simulator& sim, const SoftmaxPolicy& ego, const SoftmaxPolicy& meta,
                                     double gamma = 0.99);

std::string ce_trace_csv(const CeResult& result);

// ---------------------------------------------------------------------------

struct RateStat {
    double mean = 0.0;
    double std = 0.0;  // per-episode population standard deviation
};

struct EvalReport {
    std::string label;
    std::string training;  // literal of the training distribution, when known
    std::string proposal;
    std::string naturalistic;
    std::size_t n = 0;
    std::uint64_t seed = 0;
    RateStat failure;  // weighted collision ∨ timeout
    RateStat success;
    RateStat collision;
    RateStat timeout;
    RateStat raw_success;
    RateStat raw_collision;
    RateStat raw_timeout;
    double mean_weight = 0.0;
    double max_weight = 0.0;
    double ess_max = 0.0;  // Σw / max w
    double ess_sq = 0.0;   // (Σw)² / Σw²
};

using OutcomeSampler = std::function<Outcome(double beta, std::uint64_t seed)>;

/// Draws β_i ~ p_evaluation, runs one episode each and weights the outcome
/// indicators by the uncapped ratio p_naturalistic / p_evaluation. Throws
/// SupportError when the proposal does not cover the naturalistic support.
EvalReport evaluate_is(const OutcomeSampler& outcome, const ScenarioDistribution& p_evaluation,
                       const ScenarioDistribution& p_naturalistic, std::size_t n, std::uint64_t seed,
                       std::size_t jobs = 1);

/// Rollout-based form. The first `keep` episodes are returned in `kept`.
EvalReport evaluate_is(const Simulator& sim, const SoftmaxPolicy& ego, const SoftmaxPolicy& meta,
                       const ScenarioDistribution& p_evaluation, const ScenarioDistribution& p_naturalistic,
                       std::size_t n, std::uint64_t seed, std::size_t jobs = 1, std::size_t keep = 0,
                       std::vector<EpisodeRecord>* kept = nullptr);

/// "0.660 ± 0.473"
std::string format_rate(const RateStat& r);

inline constexpr const char* kEvalCsvHeader = "policy,training_distribution,success,collision,timeout";
std::string eval_csv_row(const EvalReport& r);
std::string eval_json(const EvalReport& r);

}  // namespace ismeta
