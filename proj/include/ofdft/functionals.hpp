#pragma once

#include <string>

#include "ofdft/grid.hpp"

namespace ofdft {
namespace functionals {

// ---------------------------------------------------------------------------
// Classical density functionals evaluated by grid quadrature. Every
// functional returns its energy and, when the density carries amplitude
// tables, the analytic gradient with respect to the density coefficients.
// ---------------------------------------------------------------------------
struct FunctionalResult {
  double value = 0.0;
  VectorXd grad_p;  // empty when the input carries no amplitude tables
};

// Enhancement-factor constants for the gradient-corrected functionals.
// Defaults follow the published APBE (Constantin et al. 2011) and PBE
// exchange (Perdew-Burke-Ernzerhof 1996) values; load_gga_params reads the
// same numbers from the bundled key = value file.
struct GgaParams {
  double apbe_kappa = 0.804;
  double apbe_mu = 0.23889;
  double pbex_kappa = 0.804;
  double pbex_mu = 0.2195149727645171;
};
GgaParams load_gga_params(const std::string& path);  // throws config_error

enum class Kind { tf, vw, tf_vw19, tf_vw, apbe, lda_x, pbe_x };

// Accepted names: tf, vw, tf+1/9vw, tf+vw, apbe, lda-x, pbe-x.
Kind parse_functional(const std::string& name);  // throws config_error
const std::string& functional_name(Kind kind);
bool is_kinetic(Kind kind);  // true for the KEDFs, false for lda-x / pbe-x

// Pointwise kernel f(rho, sigma) with partial derivatives; sigma = |grad
// rho|^2. Points with rho <= 1e-12 contribute exactly zero (cusp and
// fractional-power guard).
void kernel(Kind kind, const GgaParams& params, const VectorXd& rho,
            const VectorXd& sigma, VectorXd& f, VectorXd& f_rho,
            VectorXd& f_sigma);

// value = sum_g w_g f(rho_g, sigma_g);
// grad_p[mu] = sum_g w_g (f_rho omega_mu + 2 f_sigma grad rho . grad omega_mu)
FunctionalResult evaluate(Kind kind, const grid::Grid& g,
                          const grid::DensityOnGrid& d,
                          const GgaParams& params = GgaParams());

}  // namespace functionals
}  // namespace ofdft
