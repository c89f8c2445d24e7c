#include "ismeta/config.hpp"

#include <set>

#include <yaml-cpp/yaml.h>

#include "ismeta/errors.hpp"
#include "ismeta/io.hpp"
#include "ismeta/parallel.hpp"

#ifndef ISMETA_PRESET_DIR
#define ISMETA_PRESET_DIR ""
#endif

namespace ismeta {

namespace fs = std::filesystem;

namespace {

YAML::Node merge(const YAML::Node& base, const YAML::Node& over) {
    if (!base.IsMap() || !over.IsMap()) return YAML::Clone(over);
    YAML::Node out = YAML::Clone(base);
    for (const auto& kv : over) {
        const auto key = kv.first.as<std::string>();
        out[key] = out[key] ? merge(out[key], kv.second) : YAML::Clone(kv.second);
    }
    return out;
}

YAML::Node load_chain(const fs::path& file, std::set<fs::path>& seen) {
    const fs::path canon = fs::weakly_canonical(file);
    if (!seen.insert(canon).second) throw ConfigError("config inheritance cycle at " + file.string());
    if (!fs::exists(file)) throw ConfigError("config file not found: " + file.string());
    YAML::Node node;
    try {
        node = YAML::LoadFile(file.string());
    } catch (const YAML::Exception& e) {
        throw ConfigError(file.string() + ": " + e.what());
    }
    if (node.IsNull()) node = YAML::Node(YAML::NodeType::Map);
    if (!node.IsMap()) throw ConfigError(file.string() + ": top level must be a mapping");
    if (const auto parent = node["inherit"]) {
        const fs::path p = file.parent_path() / parent.as<std::string>();
        node.remove("inherit");
        return merge(load_chain(p, seen), node);
    }
    return node;
}

class Reader {
public:
    Reader(YAML::Node node, std::string where) : node_(std::move(node)), where_(std::move(where)) {}

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        const auto n = node_[key];
        if (!n) return;
        try {
            out = n.as<T>();
        } catch (const YAML::Exception&) {
            throw ConfigError("config: bad value for " + where_ + key);
        }
    }

    Reader child(const char* key) {
        seen_.insert(key);
        const auto n = node_[key];
        if (n && !n.IsMap()) throw ConfigError("config: " + where_ + key + " must be a mapping");
        return Reader(n ? n : YAML::Node(YAML::NodeType::Map), where_ + key + ".");
    }

    void reject_unknown() const {
        for (const auto& kv : node_) {
            const auto key = kv.first.as<std::string>();
            if (!seen_.count(key)) throw ConfigError("config: unknown key " + where_ + key);
        }
    }

private:
    YAML::Node node_;
    std::string where_;
    std::set<std::string> seen_;
};

void read_train(Reader r, TrainConfig& t) {
    r.get("batch", t.batch);
    r.get("updates", t.updates);
    r.get("lr", t.lr);
    r.get("gamma", t.gamma);
    r.get("reg_weight", t.reg_weight);
    r.get("reg_batch", t.reg_batch);
    r.get("weight_cap", t.weight_cap);
    r.get("per_vehicle_beta", t.per_vehicle_beta);
    r.get("baseline_rate", t.baseline_rate);
    r.get("shaping", t.shaping);
    r.reject_unknown();
}

YAML::Node write_train(const TrainConfig& t) {
    YAML::Node n;
    n["batch"] = t.batch;
    n["updates"] = t.updates;
    n["lr"] = format_double(t.lr);
    n["gamma"] = format_double(t.gamma);
    n["reg_weight"] = format_double(t.reg_weight);
    n["reg_batch"] = t.reg_batch;
    n["weight_cap"] = format_double(t.weight_cap);
    n["per_vehicle_beta"] = t.per_vehicle_beta;
    n["baseline_rate"] = format_double(t.baseline_rate);
    n["shaping"] = format_double(t.shaping);
    return n;
}

YAML::Node doubles(const std::vector<double>& v) {
    YAML::Node n(YAML::NodeType::Sequence);
    for (double x : v) n.push_back(format_double(x));
    n.SetStyle(YAML::EmitterStyle::Flow);
    return n;
}

}  // namespace

fs::path resolve_config_path(const std::string& name) {
    if (fs::exists(name)) return name;
    const fs::path preset = fs::path(ISMETA_PRESET_DIR) / name;
    if (!std::string(ISMETA_PRESET_DIR).empty() && fs::exists(preset)) return preset;
    throw ConfigError("config file not found: " + name);
}

RunConfig parse_node(const YAML::Node& root, const fs::path& base_dir);

RunConfig load_config(const fs::path& file) {
    std::set<fs::path> seen;
    return parse_node(load_chain(file, seen), file.parent_path());
}

RunConfig parse_config(const std::string& yaml_text, const fs::path& base_dir) {
    YAML::Node node;
    try {
        node = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (node.IsNull()) node = YAML::Node(YAML::NodeType::Map);
    if (!node.IsMap()) throw ConfigError("config: top level must be a mapping");
    if (node["inherit"]) {
        std::set<fs::path> seen;
        const YAML::Node parent = load_chain(base_dir / node["inherit"].as<std::string>(), seen);
        node.remove("inherit");
        node = merge(parent, node);
    }
    return parse_node(node, base_dir);
}

RunConfig parse_node(const YAML::Node& root, const fs::path& base_dir) {
    RunConfig rc;
    PipelineConfig& p = rc.pipeline;
    Reader r(root, "");
    std::uint64_t seed = p.seed;
    r.get("seed", seed);
    p.seed = seed;
    std::size_t jobs = p.jobs;
    r.get("jobs", jobs);
    p.jobs = jobs == 0 ? default_jobs() : jobs;

    {
        Reader s = r.child("scenario");
        auto& sc = p.scenario;
        s.get("dt", sc.dt);
        s.get("max_steps", sc.max_steps);
        s.get("v_max", sc.v_max);
        s.get("accel_set", sc.accel_set);
        s.get("collision_radius", sc.collision_radius);
        s.get("n_social", sc.n_social);
        s.get("ego_goal", sc.ego_goal);
        s.get("social_goal", sc.social_goal);
        Reader sr = s.child("social_reward");
        sr.get("goal_bonus", sc.social_reward.goal_bonus);
        sr.get("cruise_speed", sc.social_reward.cruise_speed);
        sr.get("cruise_weight", sc.social_reward.cruise_weight);
        sr.reject_unknown();
        Reader er = s.child("ego_reward");
        er.get("success", sc.ego_reward.success);
        er.get("collision", sc.ego_reward.collision);
        er.get("step", sc.ego_reward.step);
        er.reject_unknown();
        s.reject_unknown();
        try {
            sc.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config: scenario: ") + e.what());
        }
    }

    r.get("p_naturalistic", rc.p_naturalistic_literal);
    r.get("p0", rc.p0_literal);
    p.p_naturalistic = parse_distribution(rc.p_naturalistic_literal, base_dir);
    p.p0 = parse_distribution(rc.p0_literal, base_dir);
    r.get("mu0", p.mu0);
    r.get("sigma", p.sigma);
    r.get("K", p.K);
    r.get("beta_min", p.beta_min);
    r.get("beta_max", p.beta_max);
    r.get("baseline_betas", p.baseline_betas);
    r.get("baseline_radius", p.baseline_radius);
    r.get("n_eval", p.n_eval);
    r.get("keep_episodes", p.keep_episodes);
    r.get("ego_updates", p.ego_updates);
    r.get("cold_start", p.cold_start);
    read_train(r.child("social"), p.social);
    read_train(r.child("meta"), p.meta);
    read_train(r.child("ego"), p.ego);
    {
        Reader c = r.child("ce");
        c.get("n_samples", p.ce.n_samples);
        c.get("elite_quantile", p.ce.elite_quantile);
        c.get("threshold", p.ce.threshold);
        c.get("max_iterations", p.ce.max_iterations);
        c.get("repeats", p.ce.repeats);
        c.reject_unknown();
    }
    std::string variants;
    r.get("variants", variants);
    if (!variants.empty()) rc.variants = parse_variants(variants);
    {
        Reader a = r.child("ablation");
        a.get("means", rc.ablation_means);
        a.get("sigmas", rc.ablation_sigmas);
        a.reject_unknown();
    }
    r.reject_unknown();
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return rc;
}

std::string config_to_yaml(const RunConfig& rc) {
    const PipelineConfig& p = rc.pipeline;
    YAML::Node n;
    n["seed"] = p.seed;
    n["jobs"] = p.jobs;
    YAML::Node sc;
    sc["dt"] = format_double(p.scenario.dt);
    sc["max_steps"] = p.scenario.max_steps;
    sc["v_max"] = format_double(p.scenario.v_max);
    sc["accel_set"] = doubles(p.scenario.accel_set);
    sc["collision_radius"] = format_double(p.scenario.collision_radius);
    sc["n_social"] = p.scenario.n_social;
    sc["ego_goal"] = format_double(p.scenario.ego_goal);
    sc["social_goal"] = format_double(p.scenario.social_goal);
    sc["social_reward"]["goal_bonus"] = format_double(p.scenario.social_reward.goal_bonus);
    sc["social_reward"]["cruise_speed"] = format_double(p.scenario.social_reward.cruise_speed);
    sc["social_reward"]["cruise_weight"] = format_double(p.scenario.social_reward.cruise_weight);
    sc["ego_reward"]["success"] = format_double(p.scenario.ego_reward.success);
    sc["ego_reward"]["collision"] = format_double(p.scenario.ego_reward.collision);
    sc["ego_reward"]["step"] = format_double(p.scenario.ego_reward.step);
    n["scenario"] = sc;
    // Inline literals keep the snapshot self-contained (KDE samples included).
    n["p_naturalistic"] = p.p_naturalistic.literal();
    n["p0"] = p.p0.literal();
    n["mu0"] = format_double(p.mu0);
    n["sigma"] = format_double(p.sigma);
    n["K"] = p.K;
    n["beta_min"] = format_double(p.beta_min);
    n["beta_max"] = format_double(p.beta_max);
    n["baseline_betas"] = doubles(p.baseline_betas);
    n["baseline_radius"] = format_double(p.baseline_radius);
    n["n_eval"] = p.n_eval;
    n["keep_episodes"] = p.keep_episodes;
    YAML::Node eu(YAML::NodeType::Sequence);
    for (int u : p.ego_updates) eu.push_back(u);
    eu.SetStyle(YAML::EmitterStyle::Flow);
    n["ego_updates"] = eu;
    n["cold_start"] = p.cold_start;
    n["social"] = write_train(p.social);
    n["meta"] = write_train(p.meta);
    n["ego"] = write_train(p.ego);
    n["ce"]["n_samples"] = p.ce.n_samples;
    n["ce"]["elite_quantile"] = format_double(p.ce.elite_quantile);
    n["ce"]["threshold"] = format_double(p.ce.threshold);
    n["ce"]["max_iterations"] = p.ce.max_iterations;
    n["ce"]["repeats"] = p.ce.repeats;
    std::string variants;
    for (auto v : rc.variants) variants += (variants.empty() ? "" : ",") + std::string(variant_name(v));
    n["variants"] = variants;
    n["ablation"]["means"] = doubles(rc.ablation_means);
    n["ablation"]["sigmas"] = doubles(rc.ablation_sigmas);
    YAML::Emitter out;
    out << n;
    return std::string(out.c_str()) + "\n";
}

}  // namespace ismeta
