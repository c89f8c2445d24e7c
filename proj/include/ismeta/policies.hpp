#pragma once

// Linear-softmax policies over discretized observation features.
//
// A FeatureMap turns (vehicle state, action) into a sparse feature vector:
// the one-hot of the discretized observation crossed with the action. The
// meta variant appends a radial-basis encoding of β crossed with the action,
// which is the only channel through which β reaches the policy.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ismeta/random.hpp"
#include "ismeta/simulator.hpp"

namespace ismeta {

enum class FeatureKind { Ego, Social, Meta };

std::string_view feature_kind_name(FeatureKind k) noexcept;

/// Discretized view of one vehicle: an index into the one-hot state block,
/// plus β (used only by meta features).
struct Observation {
    std::uint32_t state = 0;
    double beta = 0.0;
    bool operator==(const Observation&) const = default;
};

inline constexpr std::size_t kMaxFeatureNnz = 8;

struct SparseFeatures {
    std::array<std::uint32_t, kMaxFeatureNnz> index{};
    std::array<double, kMaxFeatureNnz> value{};
    std::uint8_t size = 0;

    void push(std::uint32_t i, double v) {
        index[size] = i;
        value[size] = v;
        ++size;
    }
    double dot(std::span<const double> theta) const {
        double acc = 0.0;
        for (std::uint8_t k = 0; k < size; ++k) acc += value[k] * theta[index[k]];
        return acc;
    }
};

struct FeatureLayout {
    FeatureKind kind = FeatureKind::Ego;
    int progress_bins = 8;
    int speed_bins = 4;
    /// Interior edges of the signed merge-gap bins (meters); bins = edges + 1.
    std::vector<double> gap_edges{-20.0, -10.0, -5.0, 0.0, 5.0, 10.0, 20.0};
    int other_speed_bins = 4;
    int actions = 4;
    std::vector<double> rbf_centers;  // meta only
    double rbf_width = 0.5;

    bool operator==(const FeatureLayout&) const = default;
};

class FeatureMap {
public:
    explicit FeatureMap(FeatureLayout layout);

    static FeatureMap ego(std::size_t actions = 4);
    static FeatureMap social(std::size_t actions = 4);
    static FeatureMap meta(std::vector<double> centers, double width, std::size_t actions = 4);

    const FeatureLayout& layout() const noexcept { return layout_; }
    FeatureKind kind() const noexcept { return layout_.kind; }
    std::size_t action_count() const noexcept { return static_cast<std::size_t>(layout_.actions); }
    std::size_t state_count() const noexcept { return state_count_; }
    std::size_t dimension() const noexcept { return dimension_; }
    std::size_t gap_bins() const noexcept { return layout_.gap_edges.size() + 1; }

    /// Observation of vehicle `index` (0 = ego). Ego features see the social
    /// vehicle nearest along the merged lane; social features see the ego.
    Observation observe(const Simulator& sim, const WorldState& state, std::size_t index) const;

    /// Observation from raw quantities. Fractions are clamped to [0, 1].
    /// `gap` is the signed merge gap to the observed other vehicle (+inf when
    /// there is none).
    Observation observe_raw(double progress_fraction, double speed_fraction, double gap,
                            double other_speed_fraction, double beta) const;

    void encode(const Observation& obs, std::span<SparseFeatures> per_action) const;
    std::vector<SparseFeatures> encode(const Observation& obs) const;

    /// β radial-basis values (meta only; empty otherwise).
    void rbf(double beta, std::span<double> out) const;

    std::string descriptor() const;
    static FeatureMap from_descriptor(const std::string& text);

    bool operator==(const FeatureMap& other) const { return layout_ == other.layout_; }

private:
    FeatureLayout layout_;
    std::size_t state_count_ = 0;
    std::size_t dimension_ = 0;
};

class SoftmaxPolicy {
public:
    explicit SoftmaxPolicy(FeatureMap map);  // θ = 0
    SoftmaxPolicy(FeatureMap map, std::vector<double> theta);

    const FeatureMap& features() const noexcept { return map_; }
    std::size_t action_count() const noexcept { return map_.action_count(); }
    std::span<const double> theta() const noexcept { return theta_; }
    std::vector<double>& mutable_theta() noexcept { return theta_; }

    void logits(const Observation& obs, std::span<double> out) const;
    void probs(const Observation& obs, std::span<double> out) const;
    void log_probs(const Observation& obs, std::span<double> out) const;
    std::vector<double> probs(const Observation& obs) const;
    std::size_t sample_action(const Observation& obs, Rng& rng) const;

    void save(const std::filesystem::path& path) const;
    std::string serialize() const;
    static SoftmaxPolicy load(const std::filesystem::path& path);
    static SoftmaxPolicy deserialize(const std::string& text);

    bool operator==(const SoftmaxPolicy& other) const { return map_ == other.map_ && theta_ == other.theta_; }

private:
    FeatureMap map_;
    std::vector<double> theta_;
};

/// Deterministic-in-practice policy that always picks `action` (logit gap of 50).
SoftmaxPolicy constant_action_policy(FeatureMap map, std::size_t action);

struct BaselineSet {
    std::vector<double> betas;  // strictly increasing
    std::vector<SoftmaxPolicy> policies;
    double radius = 0.5;

    void validate() const;
};

/// Softmax of θᵀφ(s, a) over one feature vector per action.
std::vector<double> action_probs(const SoftmaxPolicy& policy, std::span<const SparseFeatures> per_action);

/// Mean over `states` of KL(p(·|s) ‖ q(·|s)). Throws on an empty batch.
double kl_divergence(const SoftmaxPolicy& p, const SoftmaxPolicy& q, std::span<const Observation> states);

/// Indices of the baselines with |β̄ - β| ≤ radius.
std::vector<std::size_t> nearest_baselines(double beta, const BaselineSet& baselines);

/// ∇θ ln π(a|s) = φ(s,a) - Σ_b π(b|s) φ(s,b), as a dense vector.
std::vector<double> score_gradient(const SoftmaxPolicy& policy, std::span<const SparseFeatures> per_action,
                                   std::size_t action);

/// grad += coeff · ∇θ ln π(a|s).
void accumulate_score(const SoftmaxPolicy& policy, const Observation& obs, std::size_t action, double coeff,
                      std::span<double> grad);

}  // namespace ismeta
