#pragma once

#include <map>
#include <string>
#include <vector>

#include "ofdft/common.hpp"

namespace ofdft {

// ---------------------------------------------------------------------------
// Molecular structure: coordinates in bohr, neutral systems only.
// ---------------------------------------------------------------------------
struct MolecularStructure {
  std::vector<Vector3d> coords;       // bohr
  std::vector<int> atomic_numbers;    // Z > 0
  int n_electrons = 0;                // = sum Z

  int n_atoms() const { return static_cast<int>(coords.size()); }
  void validate() const;  // even electron count, no coincident atoms
};

MolecularStructure make_structure(std::vector<Vector3d> coords_bohr,
                                  std::vector<int> atomic_numbers);
// XYZ file: count / comment / "symbol x y z" lines, coordinates in angstrom.
MolecularStructure read_xyz(const std::string& path);
MolecularStructure parse_xyz_text(const std::string& text, const std::string& origin);

// ---------------------------------------------------------------------------
// Contracted Gaussian shell of pure real spherical harmonics (l <= 2).
// Contraction coefficients are stored against raw primitives, scaled so each
// function in the shell has unit self-overlap.
// ---------------------------------------------------------------------------
struct Shell {
  int atom_index = 0;
  int l = 0;
  std::vector<double> exponents;    // strictly positive, strictly decreasing
  std::vector<double> contraction;  // same length, normalization folded in
  bool pure_harmonic = true;
};

// Flat-index record: atom, shell, angular momentum, m component, and the
// within-atom dimension index tau used by the per-element statistics layout.
struct BasisFunction {
  int atom = 0;
  int shell = 0;  // index into BasisSet::shells
  int l = 0;
  int m = 0;      // -l..l
  int tau = 0;    // within-atom function index
};

struct BasisSet {
  std::vector<Shell> shells;
  std::vector<BasisFunction> funcs;          // mu -> record
  std::vector<std::vector<int>> atom_funcs;  // atom -> list of mu (contiguous)

  int n_funcs() const { return static_cast<int>(funcs.size()); }
  int n_shells() const { return static_cast<int>(shells.size()); }
  // index_of(atom, tau) -> mu; inverse of funcs[mu] -> (atom, tau)
  int index_of(int atom, int tau) const { return atom_funcs.at(atom).at(tau); }
  // Number of functions carried by one atom of element z in this basis.
  int funcs_on_atom(int atom) const { return static_cast<int>(atom_funcs.at(atom).size()); }
};

// Per-element shell table read from the plain-text basis definition file
// (one shell per line: element, l letter, exponent/coefficient pairs).
struct ShellDef {
  int l = 0;
  std::vector<double> exponents;
  std::vector<double> coefficients;  // raw, pre-normalization
};
using ElementShellTable = std::map<int, std::vector<ShellDef>>;

ElementShellTable read_basis_file(const std::string& path);
ElementShellTable parse_basis_text(const std::string& text, const std::string& origin);

BasisSet build_orbital_basis(const MolecularStructure& structure,
                             const ElementShellTable& defs);

// Even-tempered exponent bounds per element.
struct AnchorBounds {
  double min_exp = 0.0;
  double max_exp = 0.0;
};
using AnchorTable = std::map<int, AnchorBounds>;

// Anchors derived from an orbital-shell table: [min exp / 2, 2 * max exp].
AnchorTable derive_anchors(const ElementShellTable& defs);

BasisSet build_density_basis(const MolecularStructure& structure, double beta,
                             const AnchorTable& anchors, int l_max);

// Number of density-basis functions an isolated atom of element z carries
// (the per-element dimension count of the unified coefficient layout).
int density_dims_per_element(int z, double beta, const AnchorTable& anchors, int l_max);

// Self-overlap helpers shared with the integral code ------------------------

// Angular self-overlap of the implemented real solid harmonics:
// l=0 -> 4*pi, l=1 -> 4*pi/3, l=2 -> 4*pi/5.
double solid_harmonic_angular_norm(int l);
// Radial integral of r^(2l+2) exp(-a r^2) over [0, inf).
double radial_gauss_integral(int l, double a);

}  // namespace ofdft
