#ifndef CURE_ATTACKS_HPP
#define CURE_ATTACKS_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "cure/model.hpp"
#include "cure/tensor.hpp"

namespace cure {

enum class AttackObjective {
    CrossEntropy,   // CE(f(x + d), y)
    Kl,             // KL(p(x) || p(x + d)); ignores labels
    CrossEntropyKl, // CE + objective_alpha * KL
};

[[nodiscard]] AttackObjective parse_attack_objective(std::string_view name);
[[nodiscard]] std::string_view to_string(AttackObjective objective);

/// L-infinity attack settings; epsilon and step sizes are in feature units.
struct AttackConfig {
    double epsilon{8.0 / 255.0};
    int steps{10};
    double step_size{2.0 / 255.0};
    bool random_init{true};
    AttackObjective objective{AttackObjective::CrossEntropy};
    double objective_alpha{1.0};
    double clamp_lo{0.0};
    double clamp_hi{1.0};

    void validate() const;
    /// Same settings at another radius with the step size kept at the same
    /// fraction of epsilon.
    [[nodiscard]] AttackConfig at_epsilon(double eps) const;
};

/// Single signed-gradient step of size epsilon on the CE objective. Requires
/// steps == 1; sign(0) is 0.
[[nodiscard]] Tensor fgsm(const Classifier& model, const Tensor& x, std::span<const int> labels,
                          const AttackConfig& cfg);

/// Projected gradient ascent inside the epsilon ball around x, clamped to
/// [clamp_lo, clamp_hi] after every step. `seed` drives the random start.
[[nodiscard]] Tensor pgd(const Classifier& model, const Tensor& x, std::span<const int> labels,
                         const AttackConfig& cfg, std::uint64_t seed);

/// Smallest epsilon (to within tol) at which PGD flips the prediction of the
/// single sample x, found by bisection on [0, eps_hi]. Returns 0 when x is
/// already misclassified and nullopt when eps_hi is not enough. Assumes
/// success is monotone in epsilon.
[[nodiscard]] std::optional<double> min_epsilon(const Classifier& model, const Tensor& x, int label,
                                                const AttackConfig& tmpl, double eps_hi, double tol,
                                                std::uint64_t seed);

} // namespace cure

#endif // CURE_ATTACKS_HPP
