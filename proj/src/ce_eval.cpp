#include "ismeta/ce_eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "ismeta/errors.hpp"
#include "ismeta/io.hpp"
#include "ismeta/kernels.hpp"
#include "ismeta/parallel.hpp"

#include "json.hpp"

namespace ismeta {

void CeConfig::validate() const {
    if (!std::isfinite(mu0)) throw std::invalid_argument("ce: mu0 must be finite");
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("ce: sigma must be positive and finite");
    if (!(elite_quantile > 0.0 && elite_quantile < 1.0)) throw std::invalid_argument("ce: elite quantile must be in (0, 1)");
    if (!(threshold > 0.0) || !std::isfinite(threshold)) throw std::invalid_argument("ce: threshold must be positive and finite");
    if (n_samples < 10) throw std::invalid_argument("ce: n_samples must be >= 10");
    if (max_iterations < 1) throw std::invalid_argument("ce: max_iterations must be >= 1");
    if (repeats < 1) throw std::invalid_argument("ce: repeats must be >= 1");
}

CeResult ce_optimize(const RewardSampler& objective, const CeConfig& cfg) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(cfg.n_samples);
    const auto reps = static_cast<std::uint64_t>(cfg.repeats);
    // Elite size from the quantile; rewards tied with the cut-off are added.
    const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.elite_quantile * n - 1e-9)));

    CeResult result;
    result.mu = cfg.mu0;
    std::vector<double> betas(n), rewards(n);
    std::vector<std::size_t> order(n);
    for (int it = 0; it < cfg.max_iterations; ++it) {
        const std::uint64_t iter_seed = derive_seed(cfg.seed, "ce-iteration", static_cast<std::uint64_t>(it));
        Rng rng = make_rng(derive_seed(iter_seed, "beta"));
        std::normal_distribution<double> normal(result.mu, cfg.sigma);
        for (auto& b : betas) b = normal(rng);
        parallel_for(n, cfg.jobs, [&](std::size_t i) {
            double acc = 0.0;
            for (std::uint64_t r = 0; r < reps; ++r) acc += objective(betas[i], derive_seed(iter_seed, "episode", i * reps + r));
            rewards[i] = acc / static_cast<double>(reps);
        });

        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rewards[a] < rewards[b]; });
        const double cut = rewards[order[k - 1]];
        double beta_sum = 0.0, reward_sum = 0.0;
        std::size_t count = 0;
        for (std::size_t i : order) {
            if (rewards[i] > cut) break;
            beta_sum += betas[i];
            reward_sum += rewards[i];
            ++count;
        }
        CeIteration row;
        row.iteration = it;
        row.mu = result.mu;
        row.next_mu = beta_sum / static_cast<double>(count);
        row.elite_mean_reward = reward_sum / static_cast<double>(count);
        row.elite_threshold = cut;
        row.elite_count = count;
        result.trace.push_back(row);
        const double delta = std::abs(row.next_mu - result.mu);
        result.mu = row.next_mu;
        if (delta < cfg.threshold) {
            result.converged = true;
            break;
        }
    }
    return result;
}

RewardSampler episode_reward_sampler(const Simulator& sim, const SoftmaxPolicy& ego, const SoftmaxPolicy& meta,
                                     double gamma) {
    return [&sim, &ego, &meta, gamma](double beta, std::uint64_t seed) {
        const std::vector<double> betas(static_cast<std::size_t>(sim.config().n_social), beta);
        return rollout(sim, ego, meta, betas, seed, gamma).ego_return;
    };
}

std::string ce_trace_csv(const CeResult& result) {
    std::string out = "iteration,mu,next_mu,elite_mean_reward,elite_threshold,elite_count\n";
    for (const auto& r : result.trace)
        out += csv_row({std::to_string(r.iteration), format_double(r.mu), format_double(r.next_mu),
                        format_double(r.elite_mean_reward), format_double(r.elite_threshold),
                        std::to_string(r.elite_count)});
    return out;
}

// ---------------------------------------------------------------------------

namespace {

RateStat rate(std::span<const double> w, std::span<const double> indicator) {
    const auto m = kernels::weighted_moments(w, indicator);
    const double n = static_cast<double>(w.size());
    const double mean = m.sum / n;
    return {mean, std::sqrt(std::max(0.0, m.sum_sq / n - mean * mean))};
}

EvalReport reduce(std::span<const double> weights, std::span<const Outcome> outcomes) {
    const std::size_t n = weights.size();
    std::vector<double> ones(n, 1.0), success(n), collision(n), timeout(n), failure(n);
    for (std::size_t i = 0; i < n; ++i) {
        success[i] = outcomes[i] == Outcome::Success ? 1.0 : 0.0;
        collision[i] = outcomes[i] == Outcome::Collision ? 1.0 : 0.0;
        timeout[i] = outcomes[i] == Outcome::Timeout ? 1.0 : 0.0;
        failure[i] = 1.0 - success[i];
    }
    EvalReport r;
    r.n = n;
    r.failure = rate(weights, failure);
    r.success = rate(weights, success);
    r.collision = rate(weights, collision);
    r.timeout = rate(weights, timeout);
    r.raw_success = rate(ones, success);
    r.raw_collision = rate(ones, collision);
    r.raw_timeout = rate(ones, timeout);
    const auto wm = kernels::weighted_moments(weights, ones);
    r.mean_weight = wm.sum / static_cast<double>(n);
    r.max_weight = wm.max;
    r.ess_max = wm.max > 0.0 ? wm.sum / wm.max : 0.0;
    r.ess_sq = wm.sum_sq > 0.0 ? wm.sum * wm.sum / wm.sum_sq : 0.0;
    return r;
}

void check_eval_args(const ScenarioDistribution& p_evaluation, const ScenarioDistribution& p_naturalistic,
                     std::size_t n) {
    if (n == 0) throw std::invalid_argument("evaluate: need at least one episode");
    if (!covers_support(p_evaluation, p_naturalistic))
        throw SupportError("proposal " + p_evaluation.literal() + " does not cover naturalistic support " +
                           p_naturalistic.literal());
}

double draw_beta(const ScenarioDistribution& p, std::uint64_t seed, std::size_t i) {
    Rng rng = make_rng(derive_seed(seed, "beta", i));
    return p.sample(rng);
}

}  // namespace

EvalReport evaluate_is(const OutcomeSampler& outcome, const ScenarioDistribution& p_evaluation,
                       const ScenarioDistribution& p_naturalistic, std::size_t n, std::uint64_t seed,
                       std::size_t jobs) {
    check_eval_args(p_evaluation, p_naturalistic, n);
    std::vector<double> weights(n);
    std::vector<Outcome> outcomes(n);
    parallel_for(n, jobs, [&](std::size_t i) {
        const double beta = draw_beta(p_evaluation, seed, i);
        weights[i] = likelihood_ratio(p_naturalistic, p_evaluation, beta);
        outcomes[i] = outcome(beta, derive_seed(seed, "episode", i));
    });
    EvalReport r = reduce(weights, outcomes);
    r.proposal = p_evaluation.literal();
    r.naturalistic = p_naturalistic.literal();
    r.seed = seed;
    return r;
}

EvalReport evaluate_is(const Simulator& sim, const SoftmaxPolicy& ego, const SoftmaxPolicy& meta,
                       const ScenarioDistribution& p_evaluation, const ScenarioDistribution& p_naturalistic,
                       std::size_t n, std::uint64_t seed, std::size_t jobs, std::size_t keep,
                       std::vector<EpisodeRecord>* kept) {
    check_eval_args(p_evaluation, p_naturalistic, n);
    keep = kept ? std::min(keep, n) : 0;
    if (kept) kept->assign(keep, EpisodeRecord{});
    std::vector<double> weights(n);
    std::vector<Outcome> outcomes(n);
    const auto n_social = static_cast<std::size_t>(sim.config().n_social);
    parallel_for(n, jobs, [&](std::size_t i) {
        const double beta = draw_beta(p_evaluation, seed, i);
        weights[i] = likelihood_ratio(p_naturalistic, p_evaluation, beta);
        const std::vector<double> betas(n_social, beta);
        EpisodeRecord ep = rollout(sim, ego, meta, betas, derive_seed(seed, "episode", i), 0.99);
        outcomes[i] = ep.outcome;
        if (i < keep) (*kept)[i] = std::move(ep);
    });
    EvalReport r = reduce(weights, outcomes);
    r.proposal = p_evaluation.literal();
    r.naturalistic = p_naturalistic.literal();
    r.seed = seed;
    return r;
}

std::string format_rate(const RateStat& r) { return format_fixed(r.mean, 3) + " ± " + format_fixed(r.std, 3); }

std::string eval_csv_row(const EvalReport& r) {
    return csv_row({r.label, r.training, format_rate(r.success), format_rate(r.collision), format_rate(r.timeout)});
}

std::string eval_json(const EvalReport& r) {
    auto stat = [](const RateStat& s) { return nlohmann::json{{"mean", s.mean}, {"std", s.std}}; };
    nlohmann::json j{{"label", r.label},
                     {"training", r.training},
                     {"proposal", r.proposal},
                     {"naturalistic", r.naturalistic},
                     {"n", r.n},
                     {"seed", r.seed},
                     {"weighted",
                      {{"failure", stat(r.failure)},
                       {"success", stat(r.success)},
                       {"collision", stat(r.collision)},
                       {"timeout", stat(r.timeout)}}},
                     {"unweighted",
                      {{"success", stat(r.raw_success)},
                       {"collision", stat(r.raw_collision)},
                       {"timeout", stat(r.raw_timeout)}}},
                     {"weights",
                      {{"mean", r.mean_weight}, {"max", r.max_weight}, {"ess_max", r.ess_max}, {"ess_sq", r.ess_sq}}}};
    return j.dump(2) + "\n";
}

}  // namespace ismeta
