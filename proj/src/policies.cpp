#include "ismeta/policies.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "ismeta/errors.hpp"
#include "ismeta/io.hpp"

namespace ismeta {

namespace {

constexpr std::string_view kPolicyMagic = "ismeta-policy";
constexpr int kPolicyVersion = 1;

int bin_of(double fraction, int bins) {
    if (!(fraction > 0.0)) return 0;
    const int b = static_cast<int>(fraction * bins);
    return std::min(b, bins - 1);
}

std::string join(const std::vector<double>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += format_double(xs[i]);
    }
    return out;
}

std::vector<double> split_numbers(const std::string& s) {
    std::vector<double> out;
    if (s.empty()) return out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t next = std::min(s.find(',', pos), s.size());
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(s.data() + pos, s.data() + next, v);
        if (ec != std::errc() || ptr != s.data() + next) throw ConfigError("bad number list '" + s + "'");
        out.push_back(v);
        pos = next + 1;
    }
    return out;
}

}  // namespace

std::string_view feature_kind_name(FeatureKind k) noexcept {
    switch (k) {
        case FeatureKind::Ego: return "ego";
        case FeatureKind::Social: return "social";
        case FeatureKind::Meta: return "meta";
    }
    return "?";
}

FeatureMap::FeatureMap(FeatureLayout layout) : layout_(std::move(layout)) {
    const auto& l = layout_;
    if (l.progress_bins < 1 || l.speed_bins < 1 || l.other_speed_bins < 1 || l.actions < 1)
        throw std::invalid_argument("feature layout: bin counts must be positive");
    if (!std::is_sorted(l.gap_edges.begin(), l.gap_edges.end()))
        throw std::invalid_argument("feature layout: gap edges must be sorted");
    if (l.kind == FeatureKind::Meta) {
        if (l.rbf_centers.empty()) throw std::invalid_argument("feature layout: meta features need β centers");
        if (!(l.rbf_width > 0.0)) throw std::invalid_argument("feature layout: rbf width must be > 0");
        if (l.rbf_centers.size() + 1 > kMaxFeatureNnz)
            throw std::invalid_argument("feature layout: too many β centers");
    } else if (!l.rbf_centers.empty()) {
        throw std::invalid_argument("feature layout: β centers are only valid for meta features");
    }
    state_count_ = static_cast<std::size_t>(l.progress_bins) * l.speed_bins * (l.gap_edges.size() + 1) *
                   l.other_speed_bins;
    dimension_ = (state_count_ + l.rbf_centers.size()) * static_cast<std::size_t>(l.actions);
}

FeatureMap FeatureMap::ego(std::size_t actions) {
    FeatureLayout l;
    l.kind = FeatureKind::Ego;
    l.actions = static_cast<int>(actions);
    return FeatureMap(std::move(l));
}

FeatureMap FeatureMap::social(std::size_t actions) {
    FeatureLayout l;
    l.kind = FeatureKind::Social;
    l.speed_bins = 8;
    l.actions = static_cast<int>(actions);
    return FeatureMap(std::move(l));
}

FeatureMap FeatureMap::meta(std::vector<double> centers, double width, std::size_t actions) {
    FeatureLayout l;
    l.kind = FeatureKind::Meta;
    l.speed_bins = 8;
    l.actions = static_cast<int>(actions);
    l.rbf_centers = std::move(centers);
    l.rbf_width = width;
    return FeatureMap(std::move(l));
}

Observation FeatureMap::observe_raw(double progress_fraction, double speed_fraction, double gap,
                                    double other_speed_fraction, double beta) const {
    const auto& l = layout_;
    const auto p = static_cast<std::size_t>(bin_of(progress_fraction, l.progress_bins));
    const auto v = static_cast<std::size_t>(bin_of(speed_fraction, l.speed_bins));
    const auto g = static_cast<std::size_t>(std::upper_bound(l.gap_edges.begin(), l.gap_edges.end(), gap) -
                                            l.gap_edges.begin());
    const auto o = static_cast<std::size_t>(bin_of(other_speed_fraction, l.other_speed_bins));
    const std::size_t idx =
        ((p * static_cast<std::size_t>(l.speed_bins) + v) * gap_bins() + g) * static_cast<std::size_t>(l.other_speed_bins) + o;
    return Observation{static_cast<std::uint32_t>(idx), beta};
}

Observation FeatureMap::observe(const Simulator& sim, const WorldState& state, std::size_t index) const {
    const auto& cfg = sim.config();
    const Vehicle& self = state.vehicles.at(index);
    const double goal = self.role == Role::Ego ? cfg.ego_goal : cfg.social_goal;
    double gap = std::numeric_limits<double>::infinity();
    double other_v = 0.0;
    if (self.role == Role::Ego) {
        for (std::size_t i = 1; i < state.vehicles.size(); ++i) {
            const Vehicle& other = state.vehicles[i];
            if (!other.active) continue;
            const double g = sim.merge_gap(self, other);
            if (std::abs(g) < std::abs(gap)) {
                gap = g;
                other_v = other.v;
            }
        }
    } else {
        const Vehicle& ego = state.vehicles.front();
        gap = sim.merge_gap(self, ego);
        other_v = ego.v;
    }
    return observe_raw(self.s / goal, self.v / cfg.v_max, gap, other_v / cfg.v_max, self.beta);
}

void FeatureMap::rbf(double beta, std::span<double> out) const {
    const auto& c = layout_.rbf_centers;
    const double inv = 1.0 / (2.0 * layout_.rbf_width * layout_.rbf_width);
    for (std::size_t j = 0; j < c.size(); ++j) out[j] = std::exp(-(beta - c[j]) * (beta - c[j]) * inv);
}

void FeatureMap::encode(const Observation& obs, std::span<SparseFeatures> per_action) const {
    const std::size_t A = action_count();
    if (per_action.size() != A) throw std::invalid_argument("encode: one slot per action required");
    if (obs.state >= state_count_) throw std::out_of_range("encode: observation state out of range");
    std::array<double, kMaxFeatureNnz> basis{};
    const std::size_t J = layout_.rbf_centers.size();
    if (J) rbf(obs.beta, std::span<double>(basis.data(), J));
    const std::size_t rbf_offset = state_count_ * A;
    for (std::size_t a = 0; a < A; ++a) {
        SparseFeatures& f = per_action[a];
        f.size = 0;
        f.push(static_cast<std::uint32_t>(obs.state * A + a), 1.0);
        for (std::size_t j = 0; j < J; ++j) f.push(static_cast<std::uint32_t>(rbf_offset + j * A + a), basis[j]);
    }
}

std::vector<SparseFeatures> FeatureMap::encode(const Observation& obs) const {
    std::vector<SparseFeatures> out(action_count());
    encode(obs, out);
    return out;
}

std::string FeatureMap::descriptor() const {
    const auto& l = layout_;
    std::string d = "kind=" + std::string(feature_kind_name(l.kind));
    d += ";progress_bins=" + std::to_string(l.progress_bins);
    d += ";speed_bins=" + std::to_string(l.speed_bins);
    d += ";gap_edges=" + join(l.gap_edges);
    d += ";other_speed_bins=" + std::to_string(l.other_speed_bins);
    d += ";actions=" + std::to_string(l.actions);
    if (l.kind == FeatureKind::Meta) {
        d += ";rbf_centers=" + join(l.rbf_centers);
        d += ";rbf_width=" + format_double(l.rbf_width);
    }
    return d;
}

FeatureMap FeatureMap::from_descriptor(const std::string& text) {
    FeatureLayout l;
    l.gap_edges.clear();
    std::stringstream ss(text);
    std::string item;
    auto to_int = [](const std::string& v) {
        int out = 0;
        auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("bad integer '" + v + "'");
        return out;
    };
    while (std::getline(ss, item, ';')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("bad feature descriptor entry '" + item + "'");
        const std::string key = item.substr(0, eq);
        const std::string val = item.substr(eq + 1);
        if (key == "kind") {
            if (val == "ego") l.kind = FeatureKind::Ego;
            else if (val == "social") l.kind = FeatureKind::Social;
            else if (val == "meta") l.kind = FeatureKind::Meta;
            else throw ConfigError("unknown feature kind '" + val + "'");
        } else if (key == "progress_bins") l.progress_bins = to_int(val);
        else if (key == "speed_bins") l.speed_bins = to_int(val);
        else if (key == "gap_edges") l.gap_edges = split_numbers(val);
        else if (key == "other_speed_bins") l.other_speed_bins = to_int(val);
        else if (key == "actions") l.actions = to_int(val);
        else if (key == "rbf_centers") l.rbf_centers = split_numbers(val);
        else if (key == "rbf_width") l.rbf_width = split_numbers(val).at(0);
        else throw ConfigError("unknown feature descriptor key '" + key + "'");
    }
    try {
        return FeatureMap(std::move(l));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid feature descriptor: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

SoftmaxPolicy::SoftmaxPolicy(FeatureMap map) : map_(std::move(map)), theta_(map_.dimension(), 0.0) {}

SoftmaxPolicy::SoftmaxPolicy(FeatureMap map, std::vector<double> theta) : map_(std::move(map)), theta_(std::move(theta)) {
    if (theta_.size() != map_.dimension())
        throw std::invalid_argument("policy: parameter length " + std::to_string(theta_.size()) +
                                    " does not match feature dimension " + std::to_string(map_.dimension()));
}

void SoftmaxPolicy::logits(const Observation& obs, std::span<double> out) const {
    const std::size_t A = action_count();
    if (obs.state >= map_.state_count()) throw std::out_of_range("policy: observation state out of range");
    const double* block = theta_.data() + static_cast<std::size_t>(obs.state) * A;
    for (std::size_t a = 0; a < A; ++a) out[a] = block[a];
    const auto& centers = map_.layout().rbf_centers;
    if (!centers.empty()) {
        std::array<double, kMaxFeatureNnz> basis{};
        map_.rbf(obs.beta, std::span<double>(basis.data(), centers.size()));
        const double* rbf_block = theta_.data() + map_.state_count() * A;
        for (std::size_t j = 0; j < centers.size(); ++j)
            for (std::size_t a = 0; a < A; ++a) out[a] += basis[j] * rbf_block[j * A + a];
    }
}

void SoftmaxPolicy::log_probs(const Observation& obs, std::span<double> out) const {
    logits(obs, out);
    const double m = *std::max_element(out.begin(), out.end());
    double z = 0.0;
    for (double l : out) z += std::exp(l - m);
    const double lz = m + std::log(z);
    for (double& l : out) l -= lz;
}

void SoftmaxPolicy::probs(const Observation& obs, std::span<double> out) const {
    logits(obs, out);
    const double m = *std::max_element(out.begin(), out.end());
    double z = 0.0;
    for (double& l : out) {
        l = std::exp(l - m);
        z += l;
    }
    for (double& l : out) l /= z;
}

std::vector<double> SoftmaxPolicy::probs(const Observation& obs) const {
    std::vector<double> out(action_count());
    probs(obs, out);
    return out;
}

std::size_t SoftmaxPolicy::sample_action(const Observation& obs, Rng& rng) const {
    std::array<double, 16> p{};
    const std::size_t A = action_count();
    probs(obs, std::span<double>(p.data(), A));
    const double u = uniform01(rng);
    double c = 0.0;
    for (std::size_t a = 0; a + 1 < A; ++a) {
        c += p[a];
        if (u < c) return a;
    }
    return A - 1;
}

std::string SoftmaxPolicy::serialize() const {
    std::string out;
    out += std::string(kPolicyMagic) + " " + std::to_string(kPolicyVersion) + "\n";
    out += "features " + map_.descriptor() + "\n";
    out += "dim " + std::to_string(theta_.size()) + "\n";
    for (double t : theta_) out += format_double(t) + "\n";
    return out;
}

void SoftmaxPolicy::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

SoftmaxPolicy SoftmaxPolicy::deserialize(const std::string& text) {
    std::istringstream in(text);
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != kPolicyMagic) throw ConfigError("not a policy file");
    if (version != kPolicyVersion) throw ConfigError("unsupported policy file version " + std::to_string(version));
    std::string key;
    std::string desc;
    in >> key >> desc;
    if (key != "features") throw ConfigError("policy file: missing feature descriptor");
    std::size_t dim = 0;
    in >> key >> dim;
    if (key != "dim") throw ConfigError("policy file: missing dimension");
    std::vector<double> theta(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        std::string tok;
        if (!(in >> tok)) throw ConfigError("policy file: truncated parameter vector");
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), theta[i]);
        if (ec != std::errc()) throw ConfigError("policy file: bad parameter '" + tok + "'");
    }
    return SoftmaxPolicy(FeatureMap::from_descriptor(desc), std::move(theta));
}

SoftmaxPolicy SoftmaxPolicy::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingArtifactError("policy file not found: " + path.string());
    return deserialize(read_file(path));
}

SoftmaxPolicy constant_action_policy(FeatureMap map, std::size_t action) {
    SoftmaxPolicy p(std::move(map));
    const std::size_t A = p.action_count();
    if (action >= A) throw std::invalid_argument("constant_action_policy: action out of range");
    auto& theta = p.mutable_theta();
    for (std::size_t s = 0; s < p.features().state_count(); ++s) theta[s * A + action] = 50.0;
    return p;
}

void BaselineSet::validate() const {
    if (betas.size() != policies.size()) throw std::invalid_argument("baselines: one policy per β̄ required");
    for (std::size_t i = 1; i < betas.size(); ++i)
        if (!(betas[i] > betas[i - 1])) throw std::invalid_argument("baselines: β̄ must be strictly increasing");
    if (!(radius > 0.0)) throw std::invalid_argument("baselines: radius must be > 0");
}

std::vector<double> action_probs(const SoftmaxPolicy& policy, std::span<const SparseFeatures> per_action) {
    std::vector<double> out(per_action.size());
    for (std::size_t a = 0; a < per_action.size(); ++a) out[a] = per_action[a].dot(policy.theta());
    const double m = *std::max_element(out.begin(), out.end());
    double z = 0.0;
    for (double& l : out) {
        l = std::exp(l - m);
        z += l;
    }
    for (double& l : out) l /= z;
    return out;
}

double kl_divergence(const SoftmaxPolicy& p, const SoftmaxPolicy& q, std::span<const Observation> states) {
    if (states.empty()) throw std::invalid_argument("kl_divergence: empty state batch");
    if (p.action_count() != q.action_count()) throw std::invalid_argument("kl_divergence: action spaces differ");
    if (p.features().state_count() != q.features().state_count())
        throw std::invalid_argument("kl_divergence: feature maps index states differently");
    const std::size_t A = p.action_count();
    std::vector<double> lp(A), lq(A);
    double total = 0.0;
    for (const auto& s : states) {
        p.log_probs(s, lp);
        q.log_probs(s, lq);
        double kl = 0.0;
        for (std::size_t a = 0; a < A; ++a) kl += std::exp(lp[a]) * (lp[a] - lq[a]);
        total += std::max(kl, 0.0);
    }
    return total / static_cast<double>(states.size());
}

std::vector<std::size_t> nearest_baselines(double beta, const BaselineSet& baselines) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < baselines.betas.size(); ++i)
        if (std::abs(baselines.betas[i] - beta) <= baselines.radius) out.push_back(i);
    return out;
}

std::vector<double> score_gradient(const SoftmaxPolicy& policy, std::span<const SparseFeatures> per_action,
                                   std::size_t action) {
    if (action >= per_action.size()) throw std::out_of_range("score_gradient: action out of range");
    const auto pi = action_probs(policy, per_action);
    std::vector<double> g(policy.theta().size(), 0.0);
    const auto& chosen = per_action[action];
    for (std::uint8_t k = 0; k < chosen.size; ++k) g[chosen.index[k]] += chosen.value[k];
    for (std::size_t b = 0; b < per_action.size(); ++b)
        for (std::uint8_t k = 0; k < per_action[b].size; ++k) g[per_action[b].index[k]] -= pi[b] * per_action[b].value[k];
    return g;
}

void accumulate_score(const SoftmaxPolicy& policy, const Observation& obs, std::size_t action, double coeff,
                      std::span<double> grad) {
    const auto& map = policy.features();
    const std::size_t A = map.action_count();
    std::array<SparseFeatures, 16> feats{};
    std::array<double, 16> pi{};
    map.encode(obs, std::span<SparseFeatures>(feats.data(), A));
    policy.probs(obs, std::span<double>(pi.data(), A));
    const auto& chosen = feats[action];
    for (std::uint8_t k = 0; k < chosen.size; ++k) grad[chosen.index[k]] += coeff * chosen.value[k];
    for (std::size_t b = 0; b < A; ++b) {
        const double c = coeff * pi[b];
        for (std::uint8_t k = 0; k < feats[b].size; ++k) grad[feats[b].index[k]] -= c * feats[b].value[k];
    }
}

}  // namespace ismeta
