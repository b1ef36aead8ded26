#pragma once

#include <map>
#include <string>
#include <vector>

#include "ofdft/common.hpp"
#include "ofdft/ksdft.hpp"
#include "ofdft/molsys.hpp"

namespace ofdft::features {

using Eigen::Matrix3d;

// ---------------------------------------------------------------------------
// Rotation blocks for pure real spherical harmonics.
// ---------------------------------------------------------------------------

// D^l(R): orthogonal matrix such that an expansion q over the degree-l real
// harmonics, re-expressed in rotated coordinates u = R d, has coefficients
// D^l(R) q. Built from the same cartesian-to-pure tables the integral engine
// uses, so component ordering and normalization match the basis exactly.
// D^0 = [1]; D^1 is R itself in the (y, z, x) component ordering.
MatrixXd wigner_d(int l, const Matrix3d& rotation);

// ---------------------------------------------------------------------------
// Per-atom local frames.
// ---------------------------------------------------------------------------

// One right-handed orthonormal frame per atom, plus the harmonic rotation
// blocks that carry density coefficients (and gradients) into that frame.
// Rows of `rotations[a]` are the frame axes, so v_local = rotations[a] * v.
struct FrameSet {
  std::vector<Matrix3d> rotations;
  std::vector<bool> degenerate;  // deterministic completion was needed
  std::vector<std::vector<MatrixXd>> wigner;  // [atom][l] -> D^l
  int l_max = 2;
};

// Frame recipe: x points to the nearest heavy atom, z along x-hat cross the
// displacement to the second-nearest non-collinear heavy atom, y = z cross x.
// Hydrogens are skipped as references whenever the molecule has at least one
// heavy atom; in an all-hydrogen system every atom acts as heavy. If no
// second non-collinear reference exists (lone reference atom, collinear
// chains, diatomics), the frame is completed deterministically from the
// global axes (z from x-hat cross e_z, or e_y when parallel) and flagged
// degenerate.
FrameSet build_local_frames(const MolecularStructure& s, int l_max = 2);

// Blockwise application of the frame rotations; the same map serves density
// coefficients and energy gradients. l = 0 entries pass through unchanged.
VectorXd to_local(const VectorXd& v, const BasisSet& basis, const FrameSet& frames);
// Inverse of to_local (transposed blocks).
VectorXd from_local(const VectorXd& v, const BasisSet& basis, const FrameSet& frames);
// Dense block-diagonal matrix of all frame rotation blocks (mostly for tests
// and for conjugating basis-indexed matrices).
MatrixXd frame_matrix(const BasisSet& basis, const FrameSet& frames);
// Conjugation T W T^t of a basis-indexed symmetric matrix into local frames.
MatrixXd local_overlap(const MatrixXd& w, const BasisSet& basis, const FrameSet& frames);

// ---------------------------------------------------------------------------
// Natural reparameterization.
// ---------------------------------------------------------------------------

// Change of variables p~ = M^t p with M M^t = W, making Euclidean coefficient
// distance equal the L2 distance between the expanded densities. M is the
// symmetric square root Q sqrt(Lambda) Q^t of W: a matrix function of W, so
// the map commutes with atom relabeling and stays stable when W has close
// eigenvalues (eigenvector mixing cancels in the product).
struct NatReparam {
  MatrixXd m;           // symmetric square root of W
  MatrixXd q;           // eigenvectors of W
  VectorXd eigenvalues; // ascending, all positive
};

// Factorize a symmetric positive-definite overlap. Throws contract_error for
// a non-square/asymmetric input and numerical_error when the spectrum is not
// safely positive.
NatReparam build_nat_reparam(const MatrixXd& w);

VectorXd natural_apply(const VectorXd& p, const NatReparam& r);      // M^t p
VectorXd natural_invert(const VectorXd& pt, const NatReparam& r);    // M^-t pt
VectorXd natural_grad(const VectorXd& g, const NatReparam& r);       // M^-1 g
VectorXd natural_pullback(const VectorXd& gt, const NatReparam& r);  // M gt

// Frames + reparameterization for one structure. The reparameterization
// factors the overlap conjugated into local frames, which keeps the composed
// transform invariant under rigid motion of the whole molecule.
struct StructureTransform {
  FrameSet frames;
  NatReparam reparam;
};
StructureTransform build_transform(const MolecularStructure& s, const BasisSet& density_basis);

// ---------------------------------------------------------------------------
// Unified per-atom dimension layout.
// ---------------------------------------------------------------------------

// Per-atom feature vectors concatenate one block per element of the alphabet;
// an atom fills its own element's block and zero-masks the others, so every
// atom row has the same length regardless of species.
struct ElementLayout {
  std::vector<int> elements;  // ascending atomic numbers
  std::vector<int> dims;      // block length per element
  std::vector<int> offsets;   // block start within the unified vector
  int total = 0;

  int slot(int z) const;  // index into elements, -1 when absent
};

ElementLayout build_layout(const std::vector<int>& atomic_numbers, double beta,
                           const AnchorTable& anchors, int l_max);

// Unified-length vector with element z's block copied from `block`.
VectorXd unified_row(const ElementLayout& layout, int z, const VectorXd& block);

// ---------------------------------------------------------------------------
// Dataset statistics: dimension-wise rescaling and atomic reference.
// ---------------------------------------------------------------------------

// Per-element statistics over local-frame, naturally-reparameterized training
// data. Keyed by (element, within-atom dimension tau).
struct RescaleStats {
  double s_grad = 0.05;
  double s_coeff = 50.0;
  std::map<int, VectorXd> coeff_mean;  // element -> per-tau coefficient mean
  std::map<int, VectorXd> scale;       // element -> per-tau factor, all >= 1
  std::map<int, VectorXd> grad_mean;   // element -> per-tau gradient mean
  std::map<int, double> element_bias;  // empty when the global bias suffices
  double global_bias = 0.0;
};

// Scale factor for one dimension: min(mean_abs_grad / s_grad,
// s_coeff / std_coeff) when the mean gradient magnitude exceeds s_grad,
// otherwise 1. Clamped to >= 1; std_coeff floored at 1e-12.
double rescale_factor(double mean_abs_grad, double std_coeff, double s_grad,
                      double s_coeff);

// Fit means, scale factors, gradient means, and reference-energy biases on a
// generated dataset. Bias terms solve per-structure least squares over
// element counts; when every structure shares one composition only the
// global bias is used.
RescaleStats fit_rescale_stats(const ksdft::Dataset& dataset,
                               const ElementShellTable& defs, double beta = 2.5,
                               int l_max = 2, double s_grad = 0.05,
                               double s_coeff = 50.0);

// ---------------------------------------------------------------------------
// Coefficient adapter.
// ---------------------------------------------------------------------------

struct AdapterOutput {
  VectorXd scaled;   // network input: local frame -> reparam -> center+scale
  VectorXd reparam;  // reparameterized but unscaled, feeds the atomic reference
};

AdapterOutput adapter_forward(const VectorXd& p, const MolecularStructure& s,
                              const BasisSet& basis, const FrameSet& frames,
                              const NatReparam& r, const RescaleStats& stats);

// Gradient label transformed into the network's scaled coordinates:
// divide by the per-dimension factors after the frame + reparam maps.
VectorXd adapter_grad(const VectorXd& g, const MolecularStructure& s,
                      const BasisSet& basis, const FrameSet& frames,
                      const NatReparam& r, const RescaleStats& stats);

// Adjoint of the forward map: carries a gradient with respect to the scaled
// coordinates back onto raw density coefficients.
VectorXd adapter_pullback(const VectorXd& g_scaled, const MolecularStructure& s,
                          const BasisSet& basis, const FrameSet& frames,
                          const NatReparam& r, const RescaleStats& stats);

// Linear atomic-reference energy: tiled gradient means dotted with the
// reparameterized coefficients plus per-element and global biases.
double atom_ref(const VectorXd& reparam, const MolecularStructure& s,
                const BasisSet& basis, const RescaleStats& stats);
// Its (constant) gradient with respect to the reparameterized coefficients.
VectorXd atom_ref_grad(const MolecularStructure& s, const BasisSet& basis,
                       const RescaleStats& stats);
// Raw-coefficient gradient of the atomic reference for one structure.
VectorXd atom_ref_pullback(const MolecularStructure& s, const BasisSet& basis,
                           const FrameSet& frames, const NatReparam& r,
                           const RescaleStats& stats);

// ---------------------------------------------------------------------------
// Serialization (JSON, schema-versioned).
// ---------------------------------------------------------------------------

std::string stats_to_json(const RescaleStats& stats);
RescaleStats stats_from_json(const std::string& text, const std::string& origin);
void save_stats(const RescaleStats& stats, const std::string& path);
RescaleStats load_stats(const std::string& path);

}  // namespace ofdft::features
