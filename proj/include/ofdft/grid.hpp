#pragma once

#include <array>
#include <string>

#include "ofdft/molsys.hpp"

namespace ofdft {
namespace grid {

// ---------------------------------------------------------------------------
// Atom-centered quadrature: Becke-partitioned product of a Gauss-Chebyshev
// radial rule (mapped to [0, inf) with Becke's rational transformation) and a
// Lebedev angular rule. Levels trade cost against accuracy.
// ---------------------------------------------------------------------------
enum class Level { coarse, standard, fine };

Level parse_level(const std::string& name);  // throws config_error if unknown
int radial_count(Level level);               // 40 / 75 / 120
int angular_count(Level level);              // 110 / 194 / 302

// Lebedev rule on the unit sphere: `points` are unit vectors (n x 3) and
// `weights` sum to 1. Returns false if the order is not tabulated here
// (supported: 110, 194, 302; all weights strictly positive).
bool lebedev_rule(int order, MatrixXd& points, VectorXd& weights);

struct Grid {
  MatrixXd points;   // G x 3, bohr
  VectorXd weights;  // G, strictly positive

  int n_points() const { return static_cast<int>(weights.size()); }
};

// Normalized Becke cell weights of every atom at one point; entries are
// non-negative and sum to 1. Uses Bragg-Slater size adjustment and k=3
// smoothing iterations.
VectorXd becke_partition(const MolecularStructure& s, const Vector3d& r);

// Full molecular grid: every atom contributes radial_count x angular_count
// points; each point's weight is its atomic quadrature weight times the
// owning atom's Becke cell weight. Cell weights that underflow on far
// collinear points are floored at 1e-300 to keep weights strictly positive.
Grid build_grid(const MolecularStructure& s, Level level);

// ---------------------------------------------------------------------------
// Basis amplitudes on a grid. values(g, mu) = omega_mu(r_g); gradients[d]
// holds the Cartesian derivative d omega_mu / d r_d at the same points.
// ---------------------------------------------------------------------------
struct AmplitudeTable {
  MatrixXd values;                    // G x M
  std::array<MatrixXd, 3> gradients;  // each G x M
};

AmplitudeTable amplitudes(const BasisSet& basis, const MolecularStructure& s,
                          const Grid& g);

struct DensityOnGrid {
  VectorXd rho;   // G; small negative values can appear for fitted densities
  MatrixXd grad;  // G x 3
  AmplitudeTable amps;
};

// rho(r_g) = sum_mu p_mu omega_mu(r_g) and its gradient, straight from the
// amplitude tables (which are kept for later quadrature reuse).
// Throws contract_error if dim(p) != basis.n_funcs().
DensityOnGrid eval_density(const VectorXd& p, const BasisSet& basis,
                           const MolecularStructure& s, const Grid& g);

// Density of a symmetric one-particle density matrix in an orbital basis:
// rho_g = sum_ab gamma_ab phi_a(r_g) phi_b(r_g), with matching gradient.
void density_from_matrix(const AmplitudeTable& amps, const MatrixXd& gamma,
                         VectorXd& rho, MatrixXd& grad);

}  // namespace grid
}  // namespace ofdft
