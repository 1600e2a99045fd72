#pragma once

#include <cstdint>
#include <string>

#include "lsrs/network.hpp"
#include "lsrs/smoothing.hpp"
#include "lsrs/tensor.hpp"

namespace lsrs {

// Empirical cross-check of the encoder's declared Lipschitz bound. The audit
// is diagnostic only: certification always consumes the construction-time
// bound, never these estimates (empirical maxima lower-bound the true
// constant, so using them for radii would be unsound).
struct AuditReport {
    double max_pairwise_ratio = 0.0;
    double max_jacobian_norm = 0.0;
    double declared_bound = 0.0;
    std::size_t attack_violations = 0;
    double tol = 1e-3;

    bool passes() const {
        return max_pairwise_ratio <= declared_bound * (1.0 + tol) &&
               max_jacobian_norm <= declared_bound * (1.0 + tol) && attack_violations == 0;
    }
    std::string text() const;
    static std::string csv_header();
    std::string csv_row() const;
};

// Max of ||f_e(x) - f_e(x')|| / ||x - x'|| over n_pairs random base points,
// each probed at several perturbation magnitudes derived from `scale` plus a
// few steps of power-style refinement along the locally steepest direction.
double pairwise_lipschitz_probe(SplitNetwork& net, std::size_t n_pairs, double scale,
                                std::uint64_t seed);

// Largest singular value of the encoder Jacobian at x, by power iteration on
// J^T J (forward-mode taped products against the reverse-mode adjoint). A
// collapsed iterate restarts with a fresh random vector, at most 3 times.
double jacobian_spectral_norm(SplitNetwork& net, const Tensor4& x, std::size_t iters,
                              std::uint64_t seed = 0);

// Perturbation search inside the certified ball: candidates at radius
// 0.999 * cert.radius_input (random directions plus greedy refinement around
// the weakest one), each re-evaluated with an n-sample majority vote (no
// abstention). Returns the number of label flips; the certificate says this
// must be 0. Requires cert.predicted != ABSTAIN.
std::size_t certified_ball_attack(const SplitNetwork& net, const Tensor4& x,
                                  const CertResult& cert, Mode mode, const SmoothingConfig& cfg,
                                  std::size_t n_restarts);

// Runs the pairwise probe plus the Jacobian estimate over n_points random
// inputs and fills the report (attack_violations is left 0; the ball attack
// is accounted separately where certified points exist).
AuditReport audit_encoder(SplitNetwork& net, std::size_t n_pairs, std::size_t n_points,
                          std::size_t power_iters, std::uint64_t seed);

}  // namespace lsrs
