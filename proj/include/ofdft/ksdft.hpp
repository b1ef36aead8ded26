#pragma once

#include <string>
#include <vector>

#include "ofdft/functionals.hpp"
#include "ofdft/grid.hpp"
#include "ofdft/integrals.hpp"

namespace ofdft {
namespace ksdft {

// ---------------------------------------------------------------------------
// Restricted closed-shell Kohn-Sham SCF with commutator DIIS, plus the
// per-iteration machinery that turns an SCF trajectory into kinetic-
// functional training data: density fitting, value labels, gradient labels.
// ---------------------------------------------------------------------------

double nuclear_repulsion(const MolecularStructure& s);

struct ScfOptions {
  int max_iter = 100;
  int diis_depth = 8;
  double energy_tol = 1e-8;    // |E_k - E_{k-1}| below this ...
  double residual_tol = 1e-6;  // ... and max|FGS - SGF| below this
  functionals::Kind xc = functionals::Kind::lda_x;
  functionals::GgaParams gga;
  int eri_cap_nbf = 64;
};

// One Fock build: vanilla Fock of the input density, the DIIS mixture that
// was diagonalized, and the resulting orbitals/density.
struct ScfStep {
  MatrixXd fock;            // vanilla Fock from this step's input density
  MatrixXd veff;            // fock minus the kinetic matrix
  VectorXd diis_weights;    // over vanilla Focks [window_first .. this step]
  int window_first = 0;
  MatrixXd coeffs;          // B x N/2 occupied eigenvectors, C^T S C = I
  VectorXd orbital_energies;
  MatrixXd gamma_out;       // 2 C C^T (trace with S = N)
  double energy = 0.0;      // electronic energy of the input density
  double diis_residual = 0.0;
};

struct ScfTrajectory {
  bool converged = false;
  int final_step = -1;  // index of the convergence-detecting Fock build
  MatrixXd gamma_init;
  std::vector<ScfStep> steps;
  double electronic_energy = 0.0;  // energy at the final input density
  double nuclear_energy = 0.0;

  // input density of Fock build k (gamma_init for k = 0)
  const MatrixXd& gamma_in(int k) const {
    return k == 0 ? gamma_init : steps.at(k - 1).gamma_out;
  }
};

// Throws numerical_error when the overlap condition number exceeds 1e10.
// Non-convergence is reported through converged=false, not an exception.
ScfTrajectory scf_solve(const MolecularStructure& s, const BasisSet& orbital_basis,
                        const IntegralTables& tables, const grid::Grid& g,
                        const ScfOptions& opts);

// ---------------------------------------------------------------------------
// Density fitting: stack the Hartree-metric system W p = t (t_mu =
// tr(Gamma L_mu)) with the external-energy row vext . p = tr(Gamma Vext)
// and solve the combined least squares problem.
// ---------------------------------------------------------------------------
struct DensityFit {
  VectorXd p;
  double hartree_residual = 0.0;   // |W p - t|
  double external_residual = 0.0;  // |vext.p - tr(Gamma Vext)|
  bool regularized = false;        // Tikhonov fallback engaged
};
DensityFit density_fit(const MatrixXd& gamma, const IntegralTables& tables);

// ---------------------------------------------------------------------------
// Label variants. ts models the bare kinetic functional; ts-res its residual
// against APBE; etxc folds exchange-correlation into the modeled object
// (grid-free deployment); etot models the full electronic + nuclear energy.
// ---------------------------------------------------------------------------
enum class Variant { ts, ts_res, etxc, etot };
Variant parse_variant(const std::string& name);  // throws config_error
const std::string& variant_name(Variant v);

// Precomputes the grid amplitude tables both bases need and exposes the
// energy pieces shared by labels, the SCF cross-checks, and deployment.
class LabelBuilder {
 public:
  LabelBuilder(const MolecularStructure& s, const BasisSet& orbital_basis,
               const BasisSet& density_basis, const IntegralTables& tables,
               const grid::Grid& g, functionals::Kind xc,
               const functionals::GgaParams& gga);

  // E_H + E_XC + E_ext of a fitted density
  double effective_energy(const VectorXd& p) const;
  // gradient of the above: W p + vext + grad_p E_XC
  VectorXd effective_potential(const VectorXd& p) const;
  double xc_energy_of_p(const VectorXd& p) const;
  VectorXd xc_potential_of_p(const VectorXd& p) const;
  double xc_energy_of_gamma(const MatrixXd& gamma) const;
  double apbe_energy(const VectorXd& p) const;
  VectorXd apbe_gradient(const VectorXd& p) const;

  // value label for the output density of Fock build k (gamma = steps[k].
  // gamma_out, p its fit)
  double value_label(const ScfTrajectory& traj, int k, const VectorXd& p,
                     Variant variant) const;
  // gradient label for the same sample; `fitted[j]` must hold the fitted
  // coefficients of gamma_in(j) for every j in the step's DIIS window.
  // Throws contract_error when history is missing.
  VectorXd gradient_label(const ScfTrajectory& traj, int k,
                          const std::vector<VectorXd>& fitted, const VectorXd& p,
                          Variant variant) const;

  const IntegralTables& tables() const { return tables_; }
  const grid::Grid& quadrature() const { return grid_; }

 private:
  const MolecularStructure& s_;
  const BasisSet& obasis_;
  const BasisSet& dbasis_;
  const IntegralTables& tables_;
  const grid::Grid& grid_;
  functionals::Kind xc_;
  functionals::GgaParams gga_;
  grid::AmplitudeTable oamps_;
  grid::AmplitudeTable damps_;
};

// ---------------------------------------------------------------------------
// Initial densities in coefficient space.
// ---------------------------------------------------------------------------
// Core-Hamiltonian guess: diagonalize T + Vext, occupy the lowest N/2
// orbitals, density-fit the result.
VectorXd hcore_init(const MolecularStructure& s, const BasisSet& orbital_basis,
                    const IntegralTables& tables);

// Superposition of spherical isolated-atom densities: per-element template
// coefficients (l = 0 only) scaled so each atom carries exactly Z electrons.
VectorXd sad_init(const MolecularStructure& s, const ElementShellTable& defs,
                  double beta, const AnchorTable& anchors, int l_max);

// ---------------------------------------------------------------------------
// Dataset container: JSON header describing structures and provenance,
// followed by little-endian float64 blocks per sample (p, grad, value, step,
// flags).
// ---------------------------------------------------------------------------
struct TrainingSample {
  int structure_id = 0;
  VectorXd p;
  VectorXd grad;
  double value = 0.0;
  int step = 0;
  bool is_ground_state = false;
};

struct DatasetStructure {
  MolecularStructure s;
  int n_density_funcs = 0;
};

struct Dataset {
  std::string variant;
  double filter_kcal = 500.0;
  std::string basis_hash;    // orbital basis provenance
  std::string density_hash;  // density basis provenance
  std::vector<DatasetStructure> structures;
  std::vector<TrainingSample> samples;
};

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);  // throws config_error

struct DatasetOptions {
  ScfOptions scf;
  grid::Level level = grid::Level::standard;
  Variant variant = Variant::ts_res;
  double filter_kcal = 500.0;
  double beta = 2.5;
  int l_max = 2;
};

// Runs the full pipeline per geometry: SCF, per-step density fits, labels,
// energy-residual filtering. Non-converged geometries are skipped (listed in
// `skipped` when given).
Dataset generate_dataset(const std::vector<MolecularStructure>& conformations,
                         const ElementShellTable& defs, const DatasetOptions& opts,
                         std::vector<int>* skipped = nullptr);

}  // namespace ksdft
}  // namespace ofdft
