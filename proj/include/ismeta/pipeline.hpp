#pragma once

// Orchestration: social/meta stage, the K-iteration
// train → CE → evaluate → GMM loop, the four-variant benchmark harness and
// the μ × σ ablation grid.

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ismeta/ce_eval.hpp"
#include "ismeta/distributions.hpp"
#include "ismeta/policies.hpp"
#include "ismeta/simulator.hpp"
#include "ismeta/training.hpp"

namespace ismeta {

struct PipelineConfig {
    ScenarioConfig scenario = ScenarioConfig::t_intersection();
    ScenarioDistribution p_naturalistic = ScenarioDistribution::gaussian(1.5, 0.5);
    ScenarioDistribution p0 = ScenarioDistribution::gaussian(0.5, 0.5);
    /// σ of the CE proposals and of every GMM component.
    double sigma = 0.5;
    std::vector<double> baseline_betas{-1.0, 0.0, 1.0, 2.0, 3.0};
    double baseline_radius = 0.5;
    std::size_t n_eval = 5000;
    int K = 1;
    double beta_min = -1.0;
    double beta_max = 3.0;
    TrainConfig social;
    TrainConfig meta;
    TrainConfig ego;
    /// Ego update budget per iteration k (index k-1); missing entries use ego.updates.
    std::vector<int> ego_updates;
    bool cold_start = false;
    /// Start of the first CE search; later iterations start from the previous μ*.
    double mu0 = 0.0;
    CeConfig ce;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    /// Episodes written to JSON-lines per evaluation.
    std::size_t keep_episodes = 20;

    void validate() const;
    int ego_updates_for(int k) const;
};

/// Collects files written below one run directory. Thread safe.
class ArtifactSink {
public:
    explicit ArtifactSink(std::filesystem::path root);
    const std::filesystem::path& root() const noexcept { return root_; }
    /// Writes `content` to root/relative atomically; refuses to overwrite.
    void write(const std::filesystem::path& relative, const std::string& content);
    std::vector<std::filesystem::path> written() const;

private:
    std::filesystem::path root_;
    mutable std::mutex mutex_;
    std::vector<std::filesystem::path> written_;
};

struct SocialStage {
    BaselineSet baselines;
    SoftmaxPolicy meta;
    std::vector<std::vector<ProgressRow>> social_progress;
    std::vector<ProgressRow> meta_progress;
};

SocialStage train_social_stage(const Simulator& sim, const PipelineConfig& cfg, ArtifactSink* sink = nullptr,
                               const std::filesystem::path& prefix = {});

struct PipelineIteration {
    int k = 0;
    ScenarioDistribution p_training;
    CeResult ce;
    ScenarioDistribution p_evaluation;
    EvalReport report;
    ScenarioDistribution p_next;
    SoftmaxPolicy ego;
    std::vector<ProgressRow> progress;
};

struct PipelineResult {
    SoftmaxPolicy ego;
    std::vector<PipelineIteration> iterations;
    std::vector<double> mu_star;
};

PipelineResult run_pipeline(const Simulator& sim, const PipelineConfig& cfg, const SocialStage& stage,
                            ArtifactSink* sink = nullptr, const std::filesystem::path& prefix = {});
/// Trains the social stage first.
PipelineResult run_pipeline(const PipelineConfig& cfg, ArtifactSink* sink = nullptr);

std::string pipeline_trace_json(const PipelineResult& result);

enum class Variant { GEP, GIS, NEP, CEIS };
std::string_view variant_name(Variant v) noexcept;
/// Parses a comma-separated list such as "GEP,GIS,NEP,CEIS".
std::vector<Variant> parse_variants(std::string_view text);

struct BenchmarkTable {
    std::vector<EvalReport> rows;
    std::string csv() const;
};

/// Every variant is evaluated on the naturalistic distribution with the same
/// evaluation seed stream.
BenchmarkTable run_benchmarks(const PipelineConfig& cfg, const std::vector<Variant>& variants,
                              ArtifactSink* sink = nullptr);
BenchmarkTable run_benchmarks(const Simulator& sim, const PipelineConfig& cfg, const SocialStage& stage,
                              const std::vector<Variant>& variants, ArtifactSink* sink = nullptr);

struct AblationCell {
    double mu = 0.0;
    double sigma = 0.0;
    EvalReport report;
};

struct AblationGrid {
    std::vector<double> means;
    std::vector<double> sigmas;
    std::vector<AblationCell> cells;  // sigma-major
    std::string csv() const;
};

AblationGrid run_ablation(const PipelineConfig& cfg, const std::vector<double>& means,
                          const std::vector<double>& sigmas, ArtifactSink* sink = nullptr);
AblationGrid run_ablation(const Simulator& sim, const PipelineConfig& cfg, const SocialStage& stage,
                          const std::vector<double>& means, const std::vector<double>& sigmas,
                          ArtifactSink* sink = nullptr);

/// Seeds of the named stages, derived from the master seed.
struct StageSeeds {
    static std::uint64_t social(std::uint64_t master, std::size_t i);
    static std::uint64_t meta(std::uint64_t master);
    static std::uint64_t ego(std::uint64_t master, int k);
    static std::uint64_t ce(std::uint64_t master, int k);
    static std::uint64_t eval(std::uint64_t master);
};

}  // namespace ismeta
