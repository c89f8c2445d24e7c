#include "ismeta/pipeline.hpp"

#include <algorithm>
#include <stdexcept>

#include "ismeta/errors.hpp"
#include "ismeta/io.hpp"
#include "ismeta/parallel.hpp"
#include "ismeta/rollout.hpp"

#include "json.hpp"

namespace ismeta {

namespace fs = std::filesystem;

void PipelineConfig::validate() const {
    scenario.validate();
    if (K < 1) throw std::invalid_argument("pipeline: K must be >= 1");
    if (!(sigma > 0.0)) throw std::invalid_argument("pipeline: sigma must be > 0");
    if (!(beta_min < beta_max)) throw std::invalid_argument("pipeline: require beta_min < beta_max");
    if (baseline_betas.empty()) throw std::invalid_argument("pipeline: no baseline betas");
    if (!std::is_sorted(baseline_betas.begin(), baseline_betas.end()) ||
        std::adjacent_find(baseline_betas.begin(), baseline_betas.end()) != baseline_betas.end())
        throw std::invalid_argument("pipeline: baseline betas must be strictly increasing");
    if (!(baseline_radius >= 0.0)) throw std::invalid_argument("pipeline: baseline radius must be >= 0");
    if (n_eval < 1) throw std::invalid_argument("pipeline: n_eval must be >= 1");
    for (int u : ego_updates)
        if (u < 0) throw std::invalid_argument("pipeline: ego update budgets must be >= 0");
    social.validate();
    meta.validate();
    ego.validate();
    CeConfig c = ce;
    c.mu0 = mu0;
    c.sigma = sigma;
    c.validate();
}

int PipelineConfig::ego_updates_for(int k) const {
    const auto i = static_cast<std::size_t>(k - 1);
    return i < ego_updates.size() ? ego_updates[i] : ego.updates;
}

std::uint64_t StageSeeds::social(std::uint64_t master, std::size_t i) { return derive_seed(master, "social", i); }
std::uint64_t StageSeeds::meta(std::uint64_t master) { return derive_seed(master, "meta"); }
std::uint64_t StageSeeds::ego(std::uint64_t master, int k) {
    return derive_seed(master, "ego", static_cast<std::uint64_t>(k));
}
std::uint64_t StageSeeds::ce(std::uint64_t master, int k) {
    return derive_seed(master, "ce", static_cast<std::uint64_t>(k));
}
std::uint64_t StageSeeds::eval(std::uint64_t master) { return derive_seed(master, "eval"); }

// ---------------------------------------------------------------------------

ArtifactSink::ArtifactSink(fs::path root) : root_(std::move(root)) {}

void ArtifactSink::write(const fs::path& relative, const std::string& content) {
    const fs::path full = root_ / relative;
    {
        std::lock_guard lock(mutex_);
        if (fs::exists(full)) throw InvariantError("refusing to overwrite artifact " + full.string());
        written_.push_back(relative);
    }
    fs::create_directories(full.parent_path());
    write_file_atomic(full, content);
}

std::vector<fs::path> ArtifactSink::written() const {
    std::lock_guard lock(mutex_);
    auto out = written_;
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

void emit(ArtifactSink* sink, const fs::path& prefix, const fs::path& name, const std::string& content) {
    if (sink) sink->write(prefix / name, content);
}

// Re-throws with the stage named, keeping the error category.
template <class Fn>
auto staged(const std::string& stage, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        throw ConfigError(stage + ": " + e.what());
    } catch (const MissingArtifactError& e) {
        throw MissingArtifactError(stage + ": " + e.what());
    } catch (const SupportError& e) {
        throw SupportError(stage + ": " + e.what());
    } catch (const InvariantError& e) {
        throw InvariantError(stage + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(stage + ": " + e.what());
    } catch (const std::exception& e) {
        throw std::runtime_error(stage + ": " + e.what());
    }
}

TrainConfig with_stage(TrainConfig t, std::uint64_t seed, std::size_t jobs) {
    t.seed = seed;
    t.jobs = jobs;
    return t;
}

std::string episodes_jsonl(const Simulator& sim, const std::vector<EpisodeRecord>& eps) {
    std::string out;
    for (const auto& ep : eps) out += episode_to_jsonl(sim, ep);
    return out;
}

EvalReport evaluate_stage(const Simulator& sim, const PipelineConfig& cfg, const SoftmaxPolicy& ego,
                          const SoftmaxPolicy& meta, const ScenarioDistribution& p_eval, std::size_t jobs,
                          ArtifactSink* sink, const fs::path& dir) {
    std::vector<EpisodeRecord> kept;
    EvalReport r = evaluate_is(sim, ego, meta, p_eval, cfg.p_naturalistic, cfg.n_eval, StageSeeds::eval(cfg.seed),
                               jobs, cfg.keep_episodes, &kept);
    emit(sink, dir, "episodes.jsonl", episodes_jsonl(sim, kept));
    return r;
}

}  // namespace

SocialStage train_social_stage(const Simulator& sim, const PipelineConfig& cfg, ArtifactSink* sink,
                               const fs::path& prefix) {
    const std::size_t n = cfg.baseline_betas.size();
    std::vector<std::optional<TrainResult>> results(n);
    // Baselines are independent jobs; each runs its batches serially.
    const std::size_t inner = cfg.jobs > 1 && n > 1 ? 1 : cfg.jobs;
    staged("social training", [&] {
        parallel_for(n, cfg.jobs, [&](std::size_t i) {
            results[i] = train_social(sim, cfg.baseline_betas[i],
                                      with_stage(cfg.social, StageSeeds::social(cfg.seed, i), inner));
        });
    });
    SocialStage stage{BaselineSet{cfg.baseline_betas, {}, cfg.baseline_radius},
                      SoftmaxPolicy(FeatureMap::meta(cfg.baseline_betas, cfg.baseline_radius, sim.action_count())),
                      {},
                      {}};
    for (std::size_t i = 0; i < n; ++i) {
        stage.baselines.policies.push_back(results[i]->policy);
        stage.social_progress.push_back(results[i]->progress);
        const std::string tag = "baseline_" + std::to_string(i);
        emit(sink, prefix / "social", tag + ".policy", results[i]->policy.serialize());
        emit(sink, prefix / "social", tag + "_progress.csv", progress_csv(results[i]->progress));
    }
    auto meta = staged("meta training", [&] {
        return train_meta(sim, stage.baselines, cfg.beta_min, cfg.beta_max,
                          with_stage(cfg.meta, StageSeeds::meta(cfg.seed), cfg.jobs));
    });
    stage.meta = std::move(meta.policy);
    stage.meta_progress = std::move(meta.progress);
    emit(sink, prefix / "social", "meta.policy", stage.meta.serialize());
    emit(sink, prefix / "social", "meta_progress.csv", progress_csv(stage.meta_progress));
    return stage;
}

PipelineResult run_pipeline(const Simulator& sim, const PipelineConfig& cfg, const SocialStage& stage,
                            ArtifactSink* sink, const fs::path& prefix) {
    cfg.validate();
    PipelineResult result{SoftmaxPolicy(FeatureMap::ego(sim.action_count())), {}, {}};
    ScenarioDistribution p_prev = cfg.p0;
    std::optional<SoftmaxPolicy> previous;
    for (int k = 1; k <= cfg.K; ++k) {
        const std::string where = " (iteration " + std::to_string(k) + ")";
        const fs::path dir = prefix / ("iter_" + std::to_string(k));
        PipelineIteration it{k, p_prev, {}, p_prev, {}, p_prev, result.ego, {}};

        TrainConfig tc = with_stage(cfg.ego, StageSeeds::ego(cfg.seed, k), cfg.jobs);
        tc.updates = cfg.ego_updates_for(k);
        const std::optional<SoftmaxPolicy> init = cfg.cold_start ? std::nullopt : previous;
        auto trained = staged("ego training" + where, [&] {
            return train_ego(sim, stage.meta, p_prev, cfg.p_naturalistic, true, tc, init);
        });
        it.ego = std::move(trained.policy);
        it.progress = std::move(trained.progress);

        CeConfig cc = cfg.ce;
        cc.mu0 = result.mu_star.empty() ? cfg.mu0 : result.mu_star.back();
        cc.sigma = cfg.sigma;
        cc.seed = StageSeeds::ce(cfg.seed, k);
        cc.jobs = cfg.jobs;
        it.ce = staged("cross-entropy" + where, [&] {
            return ce_optimize(episode_reward_sampler(sim, it.ego, stage.meta, tc.gamma), cc);
        });
        it.p_evaluation = ScenarioDistribution::gaussian(it.ce.mu, cfg.sigma);
        it.report = staged("evaluation" + where, [&] {
            return evaluate_stage(sim, cfg, it.ego, stage.meta, it.p_evaluation, cfg.jobs, sink, dir);
        });
        it.report.label = "CEIS, k=" + std::to_string(k);
        it.report.training = p_prev.label();

        result.mu_star.push_back(it.ce.mu);
        it.p_next = make_gmm(result.mu_star, cfg.sigma);

        emit(sink, dir, "ego.policy", it.ego.serialize());
        emit(sink, dir, "ego_progress.csv", progress_csv(it.progress));
        emit(sink, dir, "ce_trace.csv", ce_trace_csv(it.ce));
        emit(sink, dir, "report.json", eval_json(it.report));

        previous = it.ego;
        p_prev = it.p_next;
        result.ego = it.ego;
        result.iterations.push_back(std::move(it));
    }
    emit(sink, prefix, "pipeline_trace.json", pipeline_trace_json(result));
    std::string rows = std::string(kEvalCsvHeader) + "\n";
    for (const auto& it : result.iterations) rows += eval_csv_row(it.report);
    emit(sink, prefix, "pipeline.csv", rows);
    return result;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, ArtifactSink* sink) {
    cfg.validate();
    const Simulator sim(cfg.scenario);
    const SocialStage stage = train_social_stage(sim, cfg, sink);
    return run_pipeline(sim, cfg, stage, sink);
}

std::string pipeline_trace_json(const PipelineResult& result) {
    nlohmann::json iters = nlohmann::json::array();
    for (const auto& it : result.iterations) {
        iters.push_back({{"k", it.k},
                         {"p_training", it.p_training.literal()},
                         {"mu_star", it.ce.mu},
                         {"ce_iterations", it.ce.trace.size()},
                         {"ce_converged", it.ce.converged},
                         {"p_evaluation", it.p_evaluation.literal()},
                         {"p_next", it.p_next.literal()},
                         {"failure", it.report.failure.mean},
                         {"success", it.report.success.mean},
                         {"collision", it.report.collision.mean},
                         {"timeout", it.report.timeout.mean}});
    }
    nlohmann::json j{{"mu_star", result.mu_star}, {"iterations", iters}};
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

std::string_view variant_name(Variant v) noexcept {
    switch (v) {
        case Variant::GEP: return "GEP";
        case Variant::GIS: return "GIS";
        case Variant::NEP: return "NEP";
        case Variant::CEIS: return "CEIS";
    }
    return "?";
}

std::vector<Variant> parse_variants(std::string_view text) {
    std::vector<Variant> out;
    for (const auto& raw : csv_split(text)) {
        std::string name;
        for (char c : raw)
            if (!std::isspace(static_cast<unsigned char>(c))) name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        Variant v;
        if (name == "GEP") v = Variant::GEP;
        else if (name == "GIS") v = Variant::GIS;
        else if (name == "NEP") v = Variant::NEP;
        else if (name == "CEIS") v = Variant::CEIS;
        else throw ConfigError("unknown variant '" + raw + "' (expected GEP, GIS, NEP, CEIS)");
        if (std::find(out.begin(), out.end(), v) != out.end()) throw ConfigError("duplicate variant " + name);
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError("no variants given");
    return out;
}

std::string BenchmarkTable::csv() const {
    std::string out = std::string(kEvalCsvHeader) + "\n";
    for (const auto& r : rows) out += eval_csv_row(r);
    return out;
}

BenchmarkTable run_benchmarks(const Simulator& sim, const PipelineConfig& cfg, const SocialStage& stage,
                              const std::vector<Variant>& variants, ArtifactSink* sink) {
    cfg.validate();
    if (variants.empty()) throw ConfigError("no variants given");
    const auto uniform = ScenarioDistribution::uniform(cfg.beta_min, cfg.beta_max);
    const std::size_t inner = cfg.jobs > 1 && variants.size() > 1 ? 1 : cfg.jobs;
    PipelineConfig inner_cfg = cfg;
    inner_cfg.jobs = inner;

    std::vector<std::vector<EvalReport>> rows(variants.size());
    parallel_for(variants.size(), cfg.jobs, [&](std::size_t v) {
        const std::string name(variant_name(variants[v]));
        const fs::path dir = name;
        if (variants[v] == Variant::CEIS) {
            const auto pipe = run_pipeline(sim, inner_cfg, stage, sink, dir);
            for (const auto& it : pipe.iterations) {
                EvalReport r = staged(name + " evaluation", [&] {
                    return evaluate_stage(sim, inner_cfg, it.ego, stage.meta, cfg.p_naturalistic, inner, sink,
                                          dir / ("naturalistic_" + std::to_string(it.k)));
                });
                r.label = cfg.K == 1 ? name : name + ", k=" + std::to_string(it.k);
                r.training = it.p_training.label();
                rows[v].push_back(std::move(r));
            }
            return;
        }
        const ScenarioDistribution& p_train = variants[v] == Variant::NEP ? cfg.p_naturalistic : uniform;
        const bool use_is = variants[v] == Variant::GIS;
        TrainConfig tc = with_stage(cfg.ego, StageSeeds::ego(cfg.seed, 1), inner);
        tc.updates = cfg.ego_updates_for(1);
        auto trained = staged(name + " training", [&] {
            return train_ego(sim, stage.meta, p_train, cfg.p_naturalistic, use_is, tc);
        });
        EvalReport r = staged(name + " evaluation", [&] {
            return evaluate_stage(sim, inner_cfg, trained.policy, stage.meta, cfg.p_naturalistic, inner, sink, dir);
        });
        r.label = name;
        r.training = p_train.label();
        emit(sink, dir, "ego.policy", trained.policy.serialize());
        emit(sink, dir, "ego_progress.csv", progress_csv(trained.progress));
        emit(sink, dir, "report.json", eval_json(r));
        rows[v].push_back(std::move(r));
    });

    BenchmarkTable table;
    for (auto& group : rows)
        for (auto& r : group) table.rows.push_back(std::move(r));
    emit(sink, {}, "benchmarks.csv", table.csv());
    return table;
}

BenchmarkTable run_benchmarks(const PipelineConfig& cfg, const std::vector<Variant>& variants, ArtifactSink* sink) {
    cfg.validate();
    const Simulator sim(cfg.scenario);
    const SocialStage stage = train_social_stage(sim, cfg, sink, "social_stage");
    return run_benchmarks(sim, cfg, stage, variants, sink);
}

// ---------------------------------------------------------------------------

std::string AblationGrid::csv() const {
    std::vector<std::string> header{"std", "metric"};
    for (double m : means) header.push_back("mu=" + format_double(m));
    std::string out = csv_row(header);
    const std::pair<const char*, RateStat EvalReport::*> metrics[] = {
        {"Success", &EvalReport::success}, {"Collision", &EvalReport::collision}, {"Time Out", &EvalReport::timeout}};
    for (std::size_t s = 0; s < sigmas.size(); ++s) {
        for (const auto& [name, field] : metrics) {
            std::vector<std::string> row{"sigma=" + format_double(sigmas[s]), name};
            for (std::size_t m = 0; m < means.size(); ++m) row.push_back(format_rate(cells[s * means.size() + m].report.*field));
            out += csv_row(row);
        }
    }
    return out;
}

AblationGrid run_ablation(const Simulator& sim, const PipelineConfig& cfg, const SocialStage& stage,
                          const std::vector<double>& means, const std::vector<double>& sigmas, ArtifactSink* sink) {
    if (means.empty() || sigmas.empty()) throw ConfigError("empty ablation grid");
    cfg.validate();
    AblationGrid grid{means, sigmas, {}};
    const std::size_t n = means.size() * sigmas.size();
    grid.cells.resize(n);
    const std::size_t inner = cfg.jobs > 1 && n > 1 ? 1 : cfg.jobs;
    PipelineConfig inner_cfg = cfg;
    inner_cfg.jobs = inner;
    parallel_for(n, cfg.jobs, [&](std::size_t c) {
        const double mu = means[c % means.size()];
        const double sigma = sigmas[c / means.size()];
        const auto p_train = ScenarioDistribution::gaussian(mu, sigma);
        const std::string tag = "mu" + format_double(mu) + "_sigma" + format_double(sigma);
        TrainConfig tc = with_stage(cfg.ego, StageSeeds::ego(cfg.seed, 1), inner);
        tc.updates = cfg.ego_updates_for(1);
        auto trained = staged("ablation training " + tag, [&] {
            return train_ego(sim, stage.meta, p_train, cfg.p_naturalistic, true, tc);
        });
        EvalReport r = staged("ablation evaluation " + tag, [&] {
            return evaluate_stage(sim, inner_cfg, trained.policy, stage.meta, cfg.p_naturalistic, inner, sink, tag);
        });
        r.label = tag;
        r.training = p_train.label();
        emit(sink, tag, "ego.policy", trained.policy.serialize());
        emit(sink, tag, "report.json", eval_json(r));
        grid.cells[c] = {mu, sigma, std::move(r)};
    });
    emit(sink, {}, "ablation.csv", grid.csv());
    return grid;
}

AblationGrid run_ablation(const PipelineConfig& cfg, const std::vector<double>& means,
                          const std::vector<double>& sigmas, ArtifactSink* sink) {
    if (means.empty() || sigmas.empty()) throw ConfigError("empty ablation grid");
    cfg.validate();
    const Simulator sim(cfg.scenario);
    const SocialStage stage = train_social_stage(sim, cfg, sink, "social_stage");
    return run_ablation(sim, cfg, stage, means, sigmas, sink);
}

}  // namespace ismeta
