#pragma once

#include <array>
#include <optional>
#include <vector>

#include "ofdft/molsys.hpp"

namespace ofdft {

// Shared angular conventions: Cartesian monomial list per degree and the
// Cartesian -> pure real-spherical-harmonic mixing matrix. The m ordering is
// l=1: (y, z, x); l=2: (sqrt3*xy, sqrt3*yz, zz - xx/2 - yy/2, sqrt3*xz,
// (sqrt3/2)(xx - yy)).
const std::vector<std::array<int, 3>>& cart_list(int l);
const MatrixXd& c2s_matrix(int l);

// Boys function F_0..F_mmax at T, absolute accuracy ~1e-13.
void boys(int mmax, double T, double* F);

// Symmetry-packed 4-center electron-repulsion tensor (ij|kl), 8-fold.
class PackedEri {
 public:
  PackedEri() = default;
  PackedEri(int nbf) : nbf_(nbf), data_(pair_count(pair_count(nbf)), 0.0) {}
  static std::size_t pair_count(std::size_t n) { return n * (n + 1) / 2; }
  int n_funcs() const { return nbf_; }
  double& at(int i, int j, int k, int l) { return data_[index(i, j, k, l)]; }
  double at(int i, int j, int k, int l) const { return data_[index(i, j, k, l)]; }
  // J_ij = sum_kl (ij|kl) Gamma_kl for symmetric Gamma.
  MatrixXd contract(const MatrixXd& gamma) const;

 private:
  std::size_t index(int i, int j, int k, int l) const;
  int nbf_ = 0;
  std::vector<double> data_;
};

namespace integrals {

MatrixXd overlap(const BasisSet& basis_a, const BasisSet& basis_b,
                 const MolecularStructure& s);
MatrixXd kinetic(const BasisSet& basis, const MolecularStructure& s);
MatrixXd nuclear_attraction_matrix(const BasisSet& basis, const MolecularStructure& s);
// v_ext[mu] = -sum_a Z_a int omega_mu / |r - x_a|
VectorXd nuclear_attraction_vector(const BasisSet& density_basis,
                                   const MolecularStructure& s);
MatrixXd coulomb_2c2e(const BasisSet& density_basis, const MolecularStructure& s);
// Lt[mu](alpha, beta) = (omega_mu | eta_alpha eta_beta)
std::vector<MatrixXd> coulomb_3c2e(const BasisSet& density_basis,
                                   const BasisSet& orbital_basis,
                                   const MolecularStructure& s);
// Refuses when B exceeds cap_nbf (memory contract), reporting required bytes.
PackedEri eri_4c2e(const BasisSet& orbital_basis, const MolecularStructure& s,
                   int cap_nbf = 64);
// w[mu] = int omega_mu; exactly zero for l > 0.
VectorXd normalization_vector(const BasisSet& density_basis);
// dip(dim, mu) = int omega_mu(r) r_dim
MatrixXd dipole_vectors(const BasisSet& density_basis, const MolecularStructure& s);
// field(dim, mu) = d/dC_dim int omega_mu(r) / |r - C|
MatrixXd field_integrals(const BasisSet& density_basis, const MolecularStructure& s,
                         const Vector3d& c);

}  // namespace integrals

// Precomputed matrix bundle for one (structure, orbital basis, density basis).
struct IntegralTables {
  MatrixXd S, T, Vext;           // B x B
  MatrixXd W, Wt;                // M x M overlap / Coulomb metric
  std::vector<MatrixXd> Lt;      // M entries of B x B
  std::optional<PackedEri> eri;  // built on request (B <= cap)
  VectorXd w, vext;              // M
  MatrixXd dip;                  // 3 x M

  int n_orbital() const { return static_cast<int>(S.rows()); }
  int n_density() const { return static_cast<int>(W.rows()); }
};

IntegralTables build_tables(const MolecularStructure& s, const BasisSet& orbital_basis,
                            const BasisSet& density_basis, bool need_eri,
                            int eri_cap_nbf = 64);

}  // namespace ofdft
