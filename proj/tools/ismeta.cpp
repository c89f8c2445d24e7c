// ismeta: command-line driver for every stage.
//
// Exit codes: 0 ok, 1 other failure, 2 config/usage error, 3 missing
// artifact, 4 support-coverage error, 5 internal invariant breach.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ismeta/ce_eval.hpp"
#include "ismeta/config.hpp"
#include "ismeta/datafit.hpp"
#include "ismeta/errors.hpp"
#include "ismeta/io.hpp"
#include "ismeta/kernels.hpp"
#include "ismeta/parallel.hpp"
#include "ismeta/pipeline.hpp"
#include "ismeta/training.hpp"

namespace fs = std::filesystem;
using namespace ismeta;

namespace {

constexpr const char* kToolVersion = "ismeta 1.0.0";
constexpr const char* kOutEnv = "ISMETA_OUT";

struct Common {
    std::string config = "synthetic.preset";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    std::string out;
};

struct Timings {
    std::vector<std::pair<std::string, double>> stages;

    template <class Fn>
    auto time(const std::string& name, Fn&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        if constexpr (std::is_void_v<decltype(fn())>) {
            fn();
            stages.emplace_back(name, elapsed(t0));
        } else {
            auto r = fn();
            stages.emplace_back(name, elapsed(t0));
            return r;
        }
    }

    static double elapsed(std::chrono::steady_clock::time_point t0) {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

std::string timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

fs::path fresh_run_dir(const Common& c, const std::string& command, std::uint64_t seed) {
    fs::path root = c.out;
    if (root.empty()) {
        const char* env = std::getenv(kOutEnv);
        root = env && *env ? env : "runs";
    }
    const std::string base = command + "-" + timestamp() + "-s" + std::to_string(seed);
    fs::path dir = root / base;
    for (int i = 1; fs::exists(dir); ++i) dir = root / (base + "-" + std::to_string(i));
    fs::create_directories(dir);
    return dir;
}

class Run {
public:
    Run(std::string command, const Common& common, std::vector<std::string> argv)
        : command_(std::move(command)), common_(common), argv_(std::move(argv)) {
        cfg_ = load_config(resolve_config_path(common.config));
        if (common.seed) cfg_.pipeline.seed = *common.seed;
        if (common.jobs) cfg_.pipeline.jobs = *common.jobs == 0 ? default_jobs() : *common.jobs;
    }

    RunConfig& cfg() { return cfg_; }
    PipelineConfig& pipe() { return cfg_.pipeline; }
    Timings& timings() { return timings_; }

    ArtifactSink& sink() {
        if (!sink_) sink_.emplace(fresh_run_dir(common_, command_, cfg_.pipeline.seed));
        return *sink_;
    }

    void finish(const nlohmann::json& extra = nlohmann::json::object()) {
        ArtifactSink& s = sink();
        nlohmann::json artifacts = nlohmann::json::array();
        for (const auto& p : s.written()) artifacts.push_back(p.generic_string());
        nlohmann::json stages = nlohmann::json::array();
        for (const auto& [name, sec] : timings_.stages) stages.push_back({{"stage", name}, {"seconds", sec}});
        nlohmann::json m{{"tool_version", kToolVersion},
                         {"command", command_},
                         {"argv", argv_},
                         {"master_seed", cfg_.pipeline.seed},
                         {"kernel_backend", std::string(kernels::backend_name(kernels::active_backend()))},
                         {"config", config_to_yaml(cfg_)},
                         {"artifacts", artifacts},
                         {"stage_timings", stages},
                         {"details", extra}};
        write_file_atomic(s.root() / "manifest.json", m.dump(2) + "\n");
        std::cout << s.root().string() << "\n";
    }

private:
    std::string command_;
    Common common_;
    std::vector<std::string> argv_;
    RunConfig cfg_;
    Timings timings_;
    std::optional<ArtifactSink> sink_;
};

BaselineSet load_baselines(const fs::path& dir, const PipelineConfig& p) {
    BaselineSet set{p.baseline_betas, {}, p.baseline_radius};
    for (std::size_t i = 0; i < p.baseline_betas.size(); ++i)
        set.policies.push_back(SoftmaxPolicy::load(dir / ("baseline_" + std::to_string(i) + ".policy")));
    return set;
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    for (const auto& cell : csv_split(text)) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(cell, &used));
            if (used != cell.size()) throw std::invalid_argument(cell);
        } catch (const std::exception&) {
            throw ConfigError("bad number in list: '" + cell + "'");
        }
    }
    return out;
}

int exit_code_for(const std::exception_ptr& e) {
    try {
        std::rethrow_exception(e);
    } catch (const ConfigError& x) {
        std::cerr << "config error: " << x.what() << "\n";
        return 2;
    } catch (const MissingArtifactError& x) {
        std::cerr << "missing artifact: " << x.what() << "\n";
        return 3;
    } catch (const SupportError& x) {
        std::cerr << "support error: " << x.what() << "\n";
        return 4;
    } catch (const InvariantError& x) {
        std::cerr << "invariant breach: " << x.what() << "\n";
        return 5;
    } catch (const std::exception& x) {
        std::cerr << "error: " << x.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"IS-guided meta RL for a T-intersection"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);
    std::vector<std::string> args(argv, argv + argc);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "config file or preset name")->capture_default_str();
        sub->add_option("--seed", common.seed, "master seed (overrides the config)");
        sub->add_option("--jobs", common.jobs, "worker threads (0 = all cores)");
        sub->add_option("--out", common.out, std::string("output root (default $") + kOutEnv + " or ./runs)");
    };

    std::function<void()> action;

    // train-social ----------------------------------------------------------
    auto* ts = app.add_subcommand("train-social", "train the per-β̄ social baselines");
    add_common(ts);
    std::optional<double> ts_beta;
    ts->add_option("--beta", ts_beta, "train a single baseline at this β̄");
    ts->callback([&] {
        action = [&] {
            Run run("train-social", common, args);
            auto& p = run.pipe();
            if (ts_beta) p.baseline_betas = {*ts_beta};
            p.validate();
            const Simulator sim(p.scenario);
            for (std::size_t i = 0; i < p.baseline_betas.size(); ++i) {
                auto r = run.timings().time("social " + format_double(p.baseline_betas[i]), [&] {
                    TrainConfig t = p.social;
                    t.seed = StageSeeds::social(p.seed, i);
                    t.jobs = p.jobs;
                    return train_social(sim, p.baseline_betas[i], t);
                });
                run.sink().write("social/baseline_" + std::to_string(i) + ".policy", r.policy.serialize());
                run.sink().write("social/baseline_" + std::to_string(i) + "_progress.csv", progress_csv(r.progress));
            }
            run.finish({{"baseline_betas", p.baseline_betas}});
        };
    });

    // train-meta ------------------------------------------------------------
    auto* tm = app.add_subcommand("train-meta", "train the β-conditioned meta-policy");
    add_common(tm);
    std::string tm_baselines;
    tm->add_option("--baselines", tm_baselines, "directory with baseline_<i>.policy (trained if omitted)");
    tm->callback([&] {
        action = [&] {
            Run run("train-meta", common, args);
            auto& p = run.pipe();
            const Simulator sim(p.scenario);
            if (tm_baselines.empty()) {
                run.timings().time("social+meta", [&] { return train_social_stage(sim, p, &run.sink()); });
            } else {
                const BaselineSet set = load_baselines(tm_baselines, p);
                auto r = run.timings().time("meta", [&] {
                    TrainConfig t = p.meta;
                    t.seed = StageSeeds::meta(p.seed);
                    t.jobs = p.jobs;
                    return train_meta(sim, set, p.beta_min, p.beta_max, t);
                });
                run.sink().write("social/meta.policy", r.policy.serialize());
                run.sink().write("social/meta_progress.csv", progress_csv(r.progress));
            }
            run.finish();
        };
    });

    // train-ego -------------------------------------------------------------
    auto* te = app.add_subcommand("train-ego", "train an ego policy against the meta-policy");
    add_common(te);
    std::string te_meta, te_training, te_init;
    bool te_is = false;
    std::optional<int> te_updates;
    te->add_option("--meta", te_meta, "meta-policy file")->required();
    te->add_option("--training", te_training, "training distribution literal (default: p0)");
    te->add_flag("--use-is", te_is, "weight episodes by p_naturalistic / p_training");
    te->add_option("--init", te_init, "initial ego policy file");
    te->add_option("--updates", te_updates, "update count (overrides the config)");
    te->callback([&] {
        action = [&] {
            Run run("train-ego", common, args);
            auto& p = run.pipe();
            const Simulator sim(p.scenario);
            const SoftmaxPolicy meta = SoftmaxPolicy::load(te_meta);
            const ScenarioDistribution p_train = te_training.empty() ? p.p0 : parse_distribution(te_training);
            std::optional<SoftmaxPolicy> init;
            if (!te_init.empty()) init = SoftmaxPolicy::load(te_init);
            TrainConfig t = p.ego;
            t.seed = StageSeeds::ego(p.seed, 1);
            t.jobs = p.jobs;
            if (te_updates) t.updates = *te_updates;
            auto r = run.timings().time("ego", [&] { return train_ego(sim, meta, p_train, p.p_naturalistic, te_is, t, init); });
            run.sink().write("ego.policy", r.policy.serialize());
            run.sink().write("ego_progress.csv", progress_csv(r.progress));
            run.finish({{"training", p_train.literal()}, {"use_is", te_is}, {"meta", te_meta}});
        };
    });

    // ce-optimize -----------------------------------------------------------
    auto* co = app.add_subcommand("ce-optimize", "cross-entropy search for the evaluation proposal");
    add_common(co);
    std::string co_ego, co_meta;
    std::optional<double> co_mu0;
    co->add_option("--ego", co_ego, "ego policy file")->required();
    co->add_option("--meta", co_meta, "meta-policy file")->required();
    co->add_option("--mu0", co_mu0, "initial mean (overrides the config)");
    co->callback([&] {
        action = [&] {
            Run run("ce-optimize", common, args);
            auto& p = run.pipe();
            const Simulator sim(p.scenario);
            const SoftmaxPolicy ego = SoftmaxPolicy::load(co_ego);
            const SoftmaxPolicy meta = SoftmaxPolicy::load(co_meta);
            CeConfig c = p.ce;
            c.mu0 = co_mu0 ? *co_mu0 : p.mu0;
            c.sigma = p.sigma;
            c.seed = StageSeeds::ce(p.seed, 1);
            c.jobs = p.jobs;
            const auto r = run.timings().time("ce", [&] { return ce_optimize(episode_reward_sampler(sim, ego, meta, p.ego.gamma), c); });
            run.sink().write("ce_trace.csv", ce_trace_csv(r));
            run.finish({{"mu_star", r.mu}, {"converged", r.converged}, {"iterations", r.trace.size()}});
        };
    });

    // evaluate --------------------------------------------------------------
    auto* ev = app.add_subcommand("evaluate", "importance-sampled failure-rate estimate");
    add_common(ev);
    std::string ev_ego, ev_meta, ev_proposal, ev_label = "ego";
    std::optional<std::size_t> ev_n;
    ev->add_option("--ego", ev_ego, "ego policy file")->required();
    ev->add_option("--meta", ev_meta, "meta-policy file")->required();
    ev->add_option("--proposal", ev_proposal, "evaluation proposal literal (default: p_naturalistic)");
    ev->add_option("--n", ev_n, "episodes (overrides n_eval)");
    ev->add_option("--label", ev_label, "policy label for the CSV row");
    ev->callback([&] {
        action = [&] {
            Run run("evaluate", common, args);
            auto& p = run.pipe();
            const Simulator sim(p.scenario);
            const SoftmaxPolicy ego = SoftmaxPolicy::load(ev_ego);
            const SoftmaxPolicy meta = SoftmaxPolicy::load(ev_meta);
            const ScenarioDistribution prop = ev_proposal.empty() ? p.p_naturalistic : parse_distribution(ev_proposal);
            std::vector<EpisodeRecord> kept;
            EvalReport r = run.timings().time("evaluate", [&] {
                return evaluate_is(sim, ego, meta, prop, p.p_naturalistic, ev_n ? *ev_n : p.n_eval,
                                   StageSeeds::eval(p.seed), p.jobs, p.keep_episodes, &kept);
            });
            r.label = ev_label;
            std::string eps;
            for (const auto& e : kept) eps += episode_to_jsonl(sim, e);
            run.sink().write("report.csv", std::string(kEvalCsvHeader) + "\n" + eval_csv_row(r));
            run.sink().write("report.json", eval_json(r));
            run.sink().write("episodes.jsonl", eps);
            run.finish({{"failure", r.failure.mean}, {"failure_std", r.failure.std}});
        };
    });

    // pipeline --------------------------------------------------------------
    auto* pl = app.add_subcommand("pipeline", "full IS-guided meta training loop");
    add_common(pl);
    std::optional<int> pl_k;
    bool pl_cold = false;
    pl->add_option("--K", pl_k, "iterations (overrides the config)");
    pl->add_flag("--cold-start", pl_cold, "train every iteration from θ = 0");
    pl->callback([&] {
        action = [&] {
            Run run("pipeline", common, args);
            auto& p = run.pipe();
            if (pl_k) p.K = *pl_k;
            if (pl_cold) p.cold_start = true;
            p.validate();
            const Simulator sim(p.scenario);
            const auto stage = run.timings().time("social+meta", [&] { return train_social_stage(sim, p, &run.sink()); });
            const auto r = run.timings().time("iterations", [&] { return run_pipeline(sim, p, stage, &run.sink()); });
            run.finish({{"mu_star", r.mu_star}});
        };
    });

    // benchmarks ------------------------------------------------------------
    auto* bm = app.add_subcommand("benchmarks", "GEP / GIS / NEP / CEIS comparison table");
    add_common(bm);
    std::string bm_variants;
    bm->add_option("--variants", bm_variants, "comma-separated subset of GEP,GIS,NEP,CEIS");
    bm->callback([&] {
        action = [&] {
            Run run("benchmarks", common, args);
            auto& p = run.pipe();
            if (!bm_variants.empty()) run.cfg().variants = parse_variants(bm_variants);
            const Simulator sim(p.scenario);
            const auto stage = run.timings().time("social+meta", [&] { return train_social_stage(sim, p, &run.sink(), "social_stage"); });
            const auto t = run.timings().time("variants", [&] { return run_benchmarks(sim, p, stage, run.cfg().variants, &run.sink()); });
            run.finish({{"rows", t.rows.size()}});
        };
    });

    // ablation --------------------------------------------------------------
    auto* ab = app.add_subcommand("ablation", "μ × σ grid of Gaussian training distributions");
    add_common(ab);
    std::string ab_means, ab_sigmas;
    ab->add_option("--means", ab_means, "comma-separated means");
    ab->add_option("--sigmas", ab_sigmas, "comma-separated standard deviations");
    ab->callback([&] {
        action = [&] {
            Run run("ablation", common, args);
            auto& p = run.pipe();
            if (ab->count("--means")) run.cfg().ablation_means = parse_list(ab_means);
            if (ab->count("--sigmas")) run.cfg().ablation_sigmas = parse_list(ab_sigmas);
            if (run.cfg().ablation_means.empty() || run.cfg().ablation_sigmas.empty()) throw ConfigError("empty ablation grid");
            const Simulator sim(p.scenario);
            const auto stage = run.timings().time("social+meta", [&] { return train_social_stage(sim, p, &run.sink(), "social_stage"); });
            run.timings().time("grid", [&] {
                return run_ablation(sim, p, stage, run.cfg().ablation_means, run.cfg().ablation_sigmas, &run.sink());
            });
            run.finish();
        };
    });

    // fit-kde ---------------------------------------------------------------
    auto* fk = app.add_subcommand("fit-kde", "fit the naturalistic KDE to β estimates");
    add_common(fk);
    std::string fk_betas, fk_bw = "auto";
    fk->add_option("--betas", fk_betas, "CSV of β values (beta or beta_hat column)")->required();
    fk->add_option("--bandwidth", fk_bw, "auto or a positive value")->capture_default_str();
    fk->callback([&] {
        action = [&] {
            Run run("fit-kde", common, args);
            if (!fs::exists(fk_betas)) throw MissingArtifactError("β file not found: " + fk_betas);
            const auto betas = read_beta_csv(fk_betas);
            std::optional<double> bw;
            if (fk_bw != "auto") bw = parse_list(fk_bw).at(0);
            const auto fit = run.timings().time("fit", [&] { return fit_naturalistic(betas, bw); });
            run.sink().write("naturalistic.json", naturalistic_json(fit));
            run.finish({{"gaussian", fit.gaussian.literal()}});
        };
    });

    // estimate-beta ---------------------------------------------------------
    auto* eb = app.add_subcommand("estimate-beta", "per-vehicle β by likelihood under the meta-policy");
    add_common(eb);
    std::string eb_traj, eb_meta, eb_bw = "auto";
    eb->add_option("--trajectories", eb_traj, "trajectory CSV")->required();
    eb->add_option("--meta", eb_meta, "meta-policy file")->required();
    eb->add_option("--bandwidth", eb_bw, "KDE bandwidth: auto or a positive value")->capture_default_str();
    eb->callback([&] {
        action = [&] {
            Run run("estimate-beta", common, args);
            auto& p = run.pipe();
            const Simulator sim(p.scenario);
            const SoftmaxPolicy meta = SoftmaxPolicy::load(eb_meta);
            if (!fs::exists(eb_traj)) throw MissingArtifactError("trajectory file not found: " + eb_traj);
            const auto trajs = ingest_trajectories(eb_traj, sim, meta.features());
            const auto grid = default_beta_grid();
            std::vector<BetaEstimate> est(trajs.size());
            run.timings().time("estimate", [&] {
                parallel_for(trajs.size(), p.jobs, [&](std::size_t i) { est[i] = estimate_beta(trajs[i], meta, grid); });
            });
            run.sink().write("betas.csv", betas_csv(trajs, est));
            nlohmann::json details{{"trajectories", trajs.size()}};
            if (est.size() >= 2) {
                std::vector<double> b;
                for (const auto& e : est) b.push_back(e.beta_hat);
                std::optional<double> bw;
                if (eb_bw != "auto") bw = parse_list(eb_bw).at(0);
                const auto fit = fit_naturalistic(b, bw);
                run.sink().write("naturalistic.json", naturalistic_json(fit));
                details["gaussian"] = fit.gaussian.literal();
            }
            run.finish(details);
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    try {
        action();
    } catch (...) {
        return exit_code_for(std::current_exception());
    }
    return 0;
}
