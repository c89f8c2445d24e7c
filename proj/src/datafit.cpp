#include "ismeta/datafit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "ismeta/errors.hpp"
#include "ismeta/io.hpp"

#include "json.hpp"

namespace ismeta {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_line(std::string_view line, char delim) {
    if (delim == ',') return csv_split(line);
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

double parse_number(const std::string& cell, std::size_t line, const char* column) {
    const std::string t = trim(cell);
    if (t == "inf" || t == "+inf") return std::numeric_limits<double>::infinity();
    if (t == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size() || std::isnan(v))
        throw ConfigError("line " + std::to_string(line) + ": bad " + column + " value '" + t + "'");
    return v;
}

long parse_integer(const std::string& cell, std::size_t line, const char* column) {
    const std::string t = trim(cell);
    long v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size())
        throw ConfigError("line " + std::to_string(line) + ": bad " + column + " value '" + t + "'");
    return v;
}

Observation featurize(const Simulator& sim, const FeatureMap& map, const TrajectoryStep& st) {
    const auto& c = sim.config();
    return map.observe_raw(st.s / c.social_goal, st.v / c.v_max, st.ego_gap, st.ego_speed / c.v_max, 0.0);
}

}  // namespace

std::vector<Trajectory> parse_trajectories(std::string_view text, const Simulator& sim, const FeatureMap& map,
                                           const TrajectoryFormat& format) {
    if (map.action_count() != sim.action_count())
        throw std::invalid_argument("trajectories: feature map and simulator disagree on the action set");
    std::vector<Trajectory> out;
    std::map<std::string, std::size_t> index;
    std::map<std::string, std::size_t> first_line;

    std::size_t line_no = 0;
    std::size_t pos = 0;
    std::vector<std::string> header;
    int col[7];
    std::fill(std::begin(col), std::end(col), -1);
    const char* names[7] = {"vehicle_id", "step", "s", "v", "action_index", "ego_gap", "ego_speed"};

    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (trim(raw).empty()) continue;
        auto cells = split_line(raw, format.delimiter);
        if (header.empty()) {
            for (auto& c : cells) header.push_back(trim(c));
            for (int k = 0; k < 7; ++k) {
                const auto it = std::find(header.begin(), header.end(), names[k]);
                if (it != header.end()) col[k] = static_cast<int>(it - header.begin());
                else if (k < 5) throw ConfigError("line " + std::to_string(line_no) + ": missing column " + names[k]);
            }
            if ((col[5] < 0) != (col[6] < 0))
                throw ConfigError("line " + std::to_string(line_no) + ": ego_gap and ego_speed must appear together");
            continue;
        }
        if (cells.size() != header.size())
            throw ConfigError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                              " fields, got " + std::to_string(cells.size()));
        TrajectoryStep st;
        const std::string id = trim(cells[static_cast<std::size_t>(col[0])]);
        if (id.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty vehicle_id");
        st.step = static_cast<int>(parse_integer(cells[static_cast<std::size_t>(col[1])], line_no, "step"));
        st.s = parse_number(cells[static_cast<std::size_t>(col[2])], line_no, "s");
        st.v = parse_number(cells[static_cast<std::size_t>(col[3])], line_no, "v");
        const long a = parse_integer(cells[static_cast<std::size_t>(col[4])], line_no, "action_index");
        if (a < 0 || static_cast<std::size_t>(a) >= sim.action_count())
            throw ConfigError("line " + std::to_string(line_no) + ": unknown action index " + std::to_string(a) +
                              " (action set has " + std::to_string(sim.action_count()) + ")");
        st.action = static_cast<std::size_t>(a);
        if (col[5] >= 0) {
            st.ego_gap = parse_number(cells[static_cast<std::size_t>(col[5])], line_no, "ego_gap");
            st.ego_speed = parse_number(cells[static_cast<std::size_t>(col[6])], line_no, "ego_speed");
        } else {
            st.ego_gap = std::numeric_limits<double>::infinity();
            st.ego_speed = 0.0;
        }
        if (!std::isfinite(st.s) || !std::isfinite(st.v) || !std::isfinite(st.ego_speed))
            throw ConfigError("line " + std::to_string(line_no) + ": non-finite state value");
        st.obs = featurize(sim, map, st);

        auto [it, fresh] = index.try_emplace(id, out.size());
        if (fresh) out.push_back(Trajectory{id, format.source, {}});
        auto& steps = out[it->second].steps;
        for (const auto& prev : steps)
            if (prev.step == st.step)
                throw ConfigError("line " + std::to_string(line_no) + ": duplicate step " + std::to_string(st.step) +
                                  " for vehicle " + id);
        steps.push_back(st);
    }
    for (auto& t : out)
        std::stable_sort(t.steps.begin(), t.steps.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
    return out;
}

std::vector<Trajectory> ingest_trajectories(const std::filesystem::path& path, const Simulator& sim,
                                            const FeatureMap& map, TrajectoryFormat format) {
    if (format.source.empty()) format.source = path.filename().string();
    const std::string text = read_file(path);
    try {
        return parse_trajectories(text, sim, map, format);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::vector<Trajectory> trajectories_from_episode(const Simulator& sim, const FeatureMap& map,
                                                  const EpisodeRecord& ep, const std::string& id_prefix) {
    std::vector<Trajectory> out;
    for (std::size_t i = 0; i < ep.betas.size(); ++i) {
        Trajectory t{id_prefix + "_" + std::to_string(i), "simulated", {}};
        for (const auto& rec : ep.steps) {
            const Vehicle& self = rec.state.vehicles[i + 1];
            if (!self.active) break;
            const Vehicle& ego = rec.state.vehicles.front();
            TrajectoryStep st{rec.state.step, self.s, self.v, sim.merge_gap(self, ego), ego.v, rec.social_actions[i], {}};
            st.obs = featurize(sim, map, st);
            t.steps.push_back(st);
        }
        if (!t.steps.empty()) out.push_back(std::move(t));
    }
    return out;
}

std::string trajectories_csv(std::span<const Trajectory> trajectories) {
    std::string out = "vehicle_id,step,s,v,action_index,ego_gap,ego_speed\n";
    for (const auto& t : trajectories)
        for (const auto& st : t.steps)
            out += csv_row({t.vehicle_id, std::to_string(st.step), format_double(st.s), format_double(st.v),
                            std::to_string(st.action), format_double(st.ego_gap), format_double(st.ego_speed)});
    return out;
}

std::vector<double> default_beta_grid() {
    std::vector<double> g;
    for (int i = -15; i <= 35; ++i) g.push_back(i / 10.0);
    return g;
}

BetaEstimate estimate_beta(const Trajectory& traj, const SoftmaxPolicy& meta, std::span<const double> grid) {
    if (traj.steps.empty()) throw std::invalid_argument("estimate_beta: empty trajectory " + traj.vehicle_id);
    if (grid.empty()) throw std::invalid_argument("estimate_beta: empty grid");
    if (!std::is_sorted(grid.begin(), grid.end())) throw std::invalid_argument("estimate_beta: grid must be sorted");
    BetaEstimate est;
    est.grid.assign(grid.begin(), grid.end());
    est.log_likelihood.assign(grid.size(), 0.0);
    std::vector<double> lp(meta.action_count());
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double ll = 0.0;
        for (const auto& st : traj.steps) {
            if (st.action >= lp.size()) throw std::invalid_argument("estimate_beta: action outside the policy's set");
            meta.log_probs(Observation{st.obs.state, grid[g]}, lp);
            ll += lp[st.action];
        }
        est.log_likelihood[g] = ll;
    }
    const auto [lo, hi] = std::minmax_element(est.log_likelihood.begin(), est.log_likelihood.end());
    const double best = *hi;
    // Among maximizers, the one closest to the middle of the grid.
    const double mid = static_cast<double>(grid.size() - 1) / 2.0;
    std::size_t pick = grid.size();
    for (std::size_t g = 0; g < grid.size(); ++g) {
        if (est.log_likelihood[g] != best) continue;
        if (pick == grid.size() || std::abs(static_cast<double>(g) - mid) < std::abs(static_cast<double>(pick) - mid))
            pick = g;
    }
    est.beta_hat = grid[pick];
    est.low_confidence = (*hi - *lo) < kLowConfidenceSpread;
    return est;
}

NaturalisticFit fit_naturalistic(std::span<const double> betas, std::optional<double> bandwidth) {
    if (betas.size() < 2) throw std::invalid_argument("fit_naturalistic: need at least 2 estimates");
    const double n = static_cast<double>(betas.size());
    const double mean = std::accumulate(betas.begin(), betas.end(), 0.0) / n;
    double ss = 0.0;
    for (double b : betas) ss += (b - mean) * (b - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    ScenarioDistribution kde = fit_kde(betas, bandwidth);
    if (!(sd > 0.0)) throw std::invalid_argument("degenerate sample set");
    return {std::move(kde), ScenarioDistribution::gaussian(mean, sd), mean, sd};
}

std::string betas_csv(std::span<const Trajectory> trajectories, std::span<const BetaEstimate> estimates) {
    if (trajectories.size() != estimates.size()) throw std::invalid_argument("betas_csv: length mismatch");
    std::string out = "vehicle_id,beta_hat,confidence\n";
    for (std::size_t i = 0; i < estimates.size(); ++i)
        out += csv_row({trajectories[i].vehicle_id, format_double(estimates[i].beta_hat),
                        estimates[i].low_confidence ? "low" : "ok"});
    return out;
}

std::string naturalistic_json(const NaturalisticFit& fit) {
    const auto& k = std::get<Kde>(fit.kde.params());
    nlohmann::json j{{"kde", fit.kde.literal()},
                     {"bandwidth", k.bandwidth},
                     {"n", k.samples.size()},
                     {"gaussian", fit.gaussian.literal()},
                     {"mean", fit.mean},
                     {"sd", fit.sd}};
    return j.dump(2) + "\n";
}

}  // namespace ismeta
