#include "ofdft/features.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "ofdft/integrals.hpp"

namespace ofdft::features {

// ---------------------------------------------------------------------------
// Harmonic rotation blocks
// ---------------------------------------------------------------------------

namespace {

// Expansion of prod_dim (row_dim(R) . d)^(e_dim) over cartesian monomials.
std::map<std::array<int, 3>, double> substitute(const Matrix3d& r,
                                                const std::array<int, 3>& exps) {
  std::map<std::array<int, 3>, double> poly{{{0, 0, 0}, 1.0}};
  for (int dim = 0; dim < 3; ++dim) {
    for (int k = 0; k < exps[dim]; ++k) {
      std::map<std::array<int, 3>, double> next;
      for (const auto& [e, c] : poly) {
        for (int j = 0; j < 3; ++j) {
          if (r(dim, j) == 0.0) continue;
          std::array<int, 3> e2 = e;
          e2[j] += 1;
          next[e2] += c * r(dim, j);
        }
      }
      poly = std::move(next);
    }
  }
  return poly;
}

}  // namespace

MatrixXd wigner_d(int l, const Matrix3d& rotation) {
  if (l < 0 || l > 2) throw contract_error("wigner_d: degree out of range");
  if (l == 0) return MatrixXd::Identity(1, 1);
  const auto& carts = cart_list(l);
  const MatrixXd& t = c2s_matrix(l);
  const int nc = static_cast<int>(carts.size());
  // Action of d -> R d on the degree-l monomials:
  // mono_x(R d) = sum_y cm(x, y) mono_y(d).
  MatrixXd cm = MatrixXd::Zero(nc, nc);
  for (int x = 0; x < nc; ++x) {
    const auto poly = substitute(rotation, carts[x]);
    for (const auto& [e, c] : poly) {
      int y = -1;
      for (int cand = 0; cand < nc; ++cand) {
        if (carts[cand] == e) {
          y = cand;
          break;
        }
      }
      if (y < 0) throw numerical_error("wigner_d: substitution left the monomial space");
      cm(x, y) += c;
    }
  }
  // Rotations keep harmonic polynomials harmonic, so the rows of t * cm stay
  // in the row space of t; project back: a t = t cm  =>  a = t cm t^+.
  const MatrixXd tt = t * t.transpose();
  return t * cm * t.transpose() * tt.inverse();
}

// ---------------------------------------------------------------------------
// Local frames
// ---------------------------------------------------------------------------

namespace {

Vector3d completion_axis(const Vector3d& xhat) {
  Vector3d v = xhat.cross(Vector3d::UnitZ());
  if (v.norm() <= 1e-8) v = xhat.cross(Vector3d::UnitY());
  return v.normalized();
}

}  // namespace

FrameSet build_local_frames(const MolecularStructure& s, int l_max) {
  if (l_max < 0 || l_max > 2) throw contract_error("build_local_frames: l_max out of range");
  const int n = s.n_atoms();
  if (n == 0) throw contract_error("build_local_frames: empty structure");

  FrameSet fs;
  fs.l_max = l_max;
  fs.rotations.resize(n);
  fs.degenerate.assign(n, false);
  fs.wigner.resize(n);

  std::vector<int> heavy;
  for (int a = 0; a < n; ++a)
    if (s.atomic_numbers[a] > 1) heavy.push_back(a);
  // An all-hydrogen molecule has no heavy atoms; every atom then serves as a
  // reference so the construction still works.
  const bool all_hydrogen = heavy.empty();
  std::vector<int> everyone(n);
  std::iota(everyone.begin(), everyone.end(), 0);

  for (int a = 0; a < n; ++a) {
    auto ordered = [&](const std::vector<int>& pool) {
      std::vector<int> out;
      for (int b : pool)
        if (b != a) out.push_back(b);
      std::sort(out.begin(), out.end(), [&](int i, int j) {
        const double di = (s.coords[i] - s.coords[a]).norm();
        const double dj = (s.coords[j] - s.coords[a]).norm();
        if (di != dj) return di < dj;
        return i < j;
      });
      return out;
    };
    const std::vector<int> cands = ordered(all_hydrogen ? everyone : heavy);

    Vector3d xhat = Vector3d::UnitX();
    Vector3d zhat = Vector3d::UnitZ();
    bool degen = true;
    if (cands.empty()) {
      // Lone atom, or the only heavy atom in the molecule: point x at the
      // nearest atom of any kind; an isolated atom keeps the global axes.
      const std::vector<int> rest = ordered(everyone);
      if (!rest.empty()) {
        xhat = (s.coords[rest[0]] - s.coords[a]).normalized();
        zhat = completion_axis(xhat);
      }
    } else {
      xhat = (s.coords[cands[0]] - s.coords[a]).normalized();
      bool found = false;
      for (std::size_t i = 1; i < cands.size() && !found; ++i) {
        const Vector3d v = s.coords[cands[i]] - s.coords[a];
        const Vector3d cr = xhat.cross(v);
        if (cr.norm() > 1e-8 * v.norm()) {
          zhat = cr.normalized();
          found = true;
        }
      }
      if (found) {
        degen = false;
      } else {
        zhat = completion_axis(xhat);
      }
    }
    const Vector3d yhat = zhat.cross(xhat);
    Matrix3d r;
    r.row(0) = xhat;
    r.row(1) = yhat;
    r.row(2) = zhat;
    fs.rotations[a] = r;
    fs.degenerate[a] = degen;
    fs.wigner[a].reserve(static_cast<std::size_t>(l_max) + 1);
    for (int l = 0; l <= l_max; ++l) fs.wigner[a].push_back(wigner_d(l, r));
  }
  return fs;
}

namespace {

std::vector<int> shell_first_func(const BasisSet& basis) {
  std::vector<int> first(basis.n_shells(), -1);
  for (int mu = 0; mu < basis.n_funcs(); ++mu) {
    const int sh = basis.funcs[mu].shell;
    if (first[sh] < 0) first[sh] = mu;
  }
  return first;
}

VectorXd apply_frames(const VectorXd& v, const BasisSet& basis,
                      const FrameSet& frames, bool transpose) {
  if (v.size() != basis.n_funcs())
    throw contract_error("frame transform: vector length does not match the basis");
  VectorXd out(v.size());
  const std::vector<int> first = shell_first_func(basis);
  for (int sh = 0; sh < basis.n_shells(); ++sh) {
    const Shell& shell = basis.shells[sh];
    if (shell.atom_index < 0 ||
        shell.atom_index >= static_cast<int>(frames.rotations.size()))
      throw contract_error("frame transform: frame set does not cover the basis atoms");
    if (shell.l > frames.l_max)
      throw contract_error("frame transform: missing rotation block for shell degree");
    const MatrixXd& d = frames.wigner[shell.atom_index][shell.l];
    const int len = 2 * shell.l + 1;
    const int mu0 = first[sh];
    if (transpose)
      out.segment(mu0, len) = d.transpose() * v.segment(mu0, len);
    else
      out.segment(mu0, len) = d * v.segment(mu0, len);
  }
  return out;
}

}  // namespace

VectorXd to_local(const VectorXd& v, const BasisSet& basis, const FrameSet& frames) {
  return apply_frames(v, basis, frames, false);
}

VectorXd from_local(const VectorXd& v, const BasisSet& basis, const FrameSet& frames) {
  return apply_frames(v, basis, frames, true);
}

MatrixXd frame_matrix(const BasisSet& basis, const FrameSet& frames) {
  const int m = basis.n_funcs();
  MatrixXd t = MatrixXd::Zero(m, m);
  const std::vector<int> first = shell_first_func(basis);
  for (int sh = 0; sh < basis.n_shells(); ++sh) {
    const Shell& shell = basis.shells[sh];
    if (shell.atom_index < 0 ||
        shell.atom_index >= static_cast<int>(frames.rotations.size()))
      throw contract_error("frame_matrix: frame set does not cover the basis atoms");
    if (shell.l > frames.l_max)
      throw contract_error("frame_matrix: missing rotation block for shell degree");
    const int len = 2 * shell.l + 1;
    t.block(first[sh], first[sh], len, len) = frames.wigner[shell.atom_index][shell.l];
  }
  return t;
}

MatrixXd local_overlap(const MatrixXd& w, const BasisSet& basis, const FrameSet& frames) {
  if (w.rows() != basis.n_funcs() || w.cols() != basis.n_funcs())
    throw contract_error("local_overlap: matrix size does not match the basis");
  const MatrixXd t = frame_matrix(basis, frames);
  return t * w * t.transpose();
}

// ---------------------------------------------------------------------------
// Natural reparameterization
// ---------------------------------------------------------------------------

NatReparam build_nat_reparam(const MatrixXd& w) {
  if (w.rows() == 0 || w.rows() != w.cols())
    throw contract_error("build_nat_reparam: square matrix required");
  const double scale = std::max(1.0, w.cwiseAbs().maxCoeff());
  if ((w - w.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw contract_error("build_nat_reparam: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (w + w.transpose()));
  if (es.info() != Eigen::Success)
    throw numerical_error("build_nat_reparam: eigendecomposition failed");
  NatReparam r;
  r.q = es.eigenvectors();
  r.eigenvalues = es.eigenvalues();
  const double lo = r.eigenvalues.minCoeff();
  const double hi = r.eigenvalues.maxCoeff();
  if (!(lo > 0.0) || lo < 1e-14 * hi)
    throw numerical_error("build_nat_reparam: overlap is not safely positive definite");
  r.m = r.q * r.eigenvalues.cwiseSqrt().asDiagonal() * r.q.transpose();
  return r;
}

namespace {

void check_reparam_size(const VectorXd& v, const NatReparam& r, const char* who) {
  if (v.size() != r.m.rows())
    throw contract_error(std::string(who) + ": vector length does not match the factorization");
}

}  // namespace

VectorXd natural_apply(const VectorXd& p, const NatReparam& r) {
  check_reparam_size(p, r, "natural_apply");
  return r.m.transpose() * p;
}

VectorXd natural_invert(const VectorXd& pt, const NatReparam& r) {
  check_reparam_size(pt, r, "natural_invert");
  return r.q * ((r.q.transpose() * pt).array() / r.eigenvalues.array().sqrt()).matrix();
}

VectorXd natural_grad(const VectorXd& g, const NatReparam& r) {
  check_reparam_size(g, r, "natural_grad");
  return r.q * ((r.q.transpose() * g).array() / r.eigenvalues.array().sqrt()).matrix();
}

VectorXd natural_pullback(const VectorXd& gt, const NatReparam& r) {
  check_reparam_size(gt, r, "natural_pullback");
  return r.m * gt;
}

StructureTransform build_transform(const MolecularStructure& s, const BasisSet& density_basis) {
  StructureTransform t;
  t.frames = build_local_frames(s);
  const MatrixXd w = integrals::overlap(density_basis, density_basis, s);
  t.reparam = build_nat_reparam(local_overlap(w, density_basis, t.frames));
  return t;
}

// ---------------------------------------------------------------------------
// Unified per-atom layout
// ---------------------------------------------------------------------------

int ElementLayout::slot(int z) const {
  for (std::size_t i = 0; i < elements.size(); ++i)
    if (elements[i] == z) return static_cast<int>(i);
  return -1;
}

ElementLayout build_layout(const std::vector<int>& atomic_numbers, double beta,
                           const AnchorTable& anchors, int l_max) {
  if (atomic_numbers.empty()) throw contract_error("build_layout: no elements given");
  std::vector<int> uniq = atomic_numbers;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  ElementLayout lay;
  lay.elements = uniq;
  for (int z : uniq) {
    lay.offsets.push_back(lay.total);
    const int d = density_dims_per_element(z, beta, anchors, l_max);
    lay.dims.push_back(d);
    lay.total += d;
  }
  return lay;
}

VectorXd unified_row(const ElementLayout& layout, int z, const VectorXd& block) {
  const int i = layout.slot(z);
  if (i < 0) throw contract_error("unified_row: element not present in the layout");
  if (block.size() != layout.dims[i])
    throw contract_error("unified_row: block length does not match the element");
  VectorXd out = VectorXd::Zero(layout.total);
  out.segment(layout.offsets[i], layout.dims[i]) = block;
  return out;
}

// ---------------------------------------------------------------------------
// Rescaling statistics
// ---------------------------------------------------------------------------

double rescale_factor(double mean_abs_grad, double std_coeff, double s_grad,
                      double s_coeff) {
  if (!(mean_abs_grad > s_grad)) return 1.0;
  const double floored = std::max(std_coeff, 1e-12);
  return std::max(1.0, std::min(mean_abs_grad / s_grad, s_coeff / floored));
}

namespace {

const VectorXd& stats_vec(const std::map<int, VectorXd>& m, int z, const char* what) {
  const auto it = m.find(z);
  if (it == m.end())
    throw contract_error(std::string("missing ") + what + " statistics for element " +
                         std::to_string(z));
  return it->second;
}

}  // namespace

RescaleStats fit_rescale_stats(const ksdft::Dataset& dataset,
                               const ElementShellTable& defs, double beta,
                               int l_max, double s_grad, double s_coeff) {
  if (dataset.structures.empty() || dataset.samples.empty())
    throw contract_error("fit_rescale_stats: dataset is empty");
  if (!(s_grad > 0.0) || !(s_coeff > 0.0))
    throw contract_error("fit_rescale_stats: thresholds must be positive");
  const AnchorTable anchors = derive_anchors(defs);

  struct Ctx {
    BasisSet basis;
    StructureTransform tf;
  };
  std::vector<Ctx> ctx(dataset.structures.size());
  for (std::size_t d = 0; d < dataset.structures.size(); ++d) {
    const auto& rec = dataset.structures[d];
    ctx[d].basis = build_density_basis(rec.s, beta, anchors, l_max);
    if (ctx[d].basis.n_funcs() != rec.n_density_funcs)
      throw contract_error("fit_rescale_stats: density-basis size disagrees with the dataset");
    ctx[d].tf = build_transform(rec.s, ctx[d].basis);
  }

  std::map<int, VectorXd> sum_p, sum_p2, sum_ag, sum_g;
  std::map<int, double> count;
  std::vector<VectorXd> reparams(dataset.samples.size());

  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& sample = dataset.samples[i];
    if (sample.structure_id < 0 ||
        sample.structure_id >= static_cast<int>(ctx.size()))
      throw contract_error("fit_rescale_stats: sample references an unknown structure");
    const Ctx& c = ctx[sample.structure_id];
    const MolecularStructure& s = dataset.structures[sample.structure_id].s;
    const VectorXd pp = natural_apply(to_local(sample.p, c.basis, c.tf.frames), c.tf.reparam);
    const VectorXd gp = natural_grad(to_local(sample.grad, c.basis, c.tf.frames), c.tf.reparam);
    reparams[i] = pp;
    for (int a = 0; a < s.n_atoms(); ++a) {
      const int z = s.atomic_numbers[a];
      const auto& funcs = c.basis.atom_funcs[a];
      const int nt = static_cast<int>(funcs.size());
      if (!count.count(z)) {
        sum_p[z] = VectorXd::Zero(nt);
        sum_p2[z] = VectorXd::Zero(nt);
        sum_ag[z] = VectorXd::Zero(nt);
        sum_g[z] = VectorXd::Zero(nt);
        count[z] = 0.0;
      }
      if (sum_p[z].size() != nt)
        throw contract_error("fit_rescale_stats: inconsistent per-element dimension count");
      for (int tau = 0; tau < nt; ++tau) {
        const double pv = pp(funcs[tau]);
        const double gv = gp(funcs[tau]);
        sum_p[z](tau) += pv;
        sum_p2[z](tau) += pv * pv;
        sum_ag[z](tau) += std::abs(gv);
        sum_g[z](tau) += gv;
      }
      count[z] += 1.0;
    }
  }

  RescaleStats st;
  st.s_grad = s_grad;
  st.s_coeff = s_coeff;
  for (const auto& [z, sp] : sum_p) {
    const double n = count[z];
    const VectorXd mean = sp / n;
    VectorXd lam(mean.size());
    for (int tau = 0; tau < mean.size(); ++tau) {
      const double var = std::max(0.0, sum_p2[z](tau) / n - mean(tau) * mean(tau));
      lam(tau) = rescale_factor(sum_ag[z](tau) / n, std::sqrt(var), s_grad, s_coeff);
    }
    st.coeff_mean[z] = mean;
    st.scale[z] = lam;
    st.grad_mean[z] = sum_g[z] / n;
  }

  // Reference-energy biases: one least-squares equation per structure,
  // relating element counts (plus a constant) to the mean of the labels with
  // the tiled gradient-mean contribution removed.
  const int nd = static_cast<int>(dataset.structures.size());
  std::vector<double> ysum(nd, 0.0);
  std::vector<int> yn(nd, 0);
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& sample = dataset.samples[i];
    const int sid = sample.structure_id;
    const Ctx& c = ctx[sid];
    const MolecularStructure& s = dataset.structures[sid].s;
    double gdot = 0.0;
    for (int a = 0; a < s.n_atoms(); ++a) {
      const VectorXd& gbar = st.grad_mean.at(s.atomic_numbers[a]);
      const auto& funcs = c.basis.atom_funcs[a];
      for (std::size_t tau = 0; tau < funcs.size(); ++tau)
        gdot += gbar(static_cast<int>(tau)) * reparams[i](funcs[tau]);
    }
    ysum[sid] += sample.value - gdot;
    yn[sid] += 1;
  }

  std::vector<int> elements;
  for (const auto& [z, unused] : st.coeff_mean) elements.push_back(z);
  std::vector<std::vector<double>> rows;
  std::vector<double> rhs;
  for (int d = 0; d < nd; ++d) {
    if (yn[d] == 0) continue;
    std::vector<double> row(elements.size(), 0.0);
    for (int z : dataset.structures[d].s.atomic_numbers) {
      const auto it = std::find(elements.begin(), elements.end(), z);
      row[static_cast<std::size_t>(it - elements.begin())] += 1.0;
    }
    rows.push_back(std::move(row));
    rhs.push_back(ysum[d] / yn[d]);
  }

  bool single_composition = true;
  for (const auto& row : rows)
    if (row != rows.front()) single_composition = false;

  if (single_composition) {
    // Per-element biases are not identifiable from one composition; fold
    // everything into the global bias.
    st.global_bias = std::accumulate(rhs.begin(), rhs.end(), 0.0) /
                     static_cast<double>(rhs.size());
  } else {
    const int ne = static_cast<int>(elements.size());
    MatrixXd a(rows.size(), ne + 1);
    VectorXd b(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (int k = 0; k < ne; ++k) a(i, k) = rows[i][k];
      a(i, ne) = 1.0;
      b(i) = rhs[i];
    }
    const VectorXd coeff = a.colPivHouseholderQr().solve(b);
    for (int k = 0; k < ne; ++k) st.element_bias[elements[k]] = coeff(k);
    st.global_bias = coeff(ne);
  }
  return st;
}

// ---------------------------------------------------------------------------
// Coefficient adapter
// ---------------------------------------------------------------------------

AdapterOutput adapter_forward(const VectorXd& p, const MolecularStructure& s,
                              const BasisSet& basis, const FrameSet& frames,
                              const NatReparam& r, const RescaleStats& stats) {
  AdapterOutput out;
  out.reparam = natural_apply(to_local(p, basis, frames), r);
  out.scaled.resize(out.reparam.size());
  for (int mu = 0; mu < basis.n_funcs(); ++mu) {
    const BasisFunction& f = basis.funcs[mu];
    const int z = s.atomic_numbers.at(f.atom);
    const VectorXd& mean = stats_vec(stats.coeff_mean, z, "coefficient-mean");
    const VectorXd& lam = stats_vec(stats.scale, z, "scale");
    if (f.tau >= mean.size() || f.tau >= lam.size())
      throw contract_error("adapter_forward: statistics dimension mismatch");
    out.scaled(mu) = lam(f.tau) * (out.reparam(mu) - mean(f.tau));
  }
  return out;
}

VectorXd adapter_grad(const VectorXd& g, const MolecularStructure& s,
                      const BasisSet& basis, const FrameSet& frames,
                      const NatReparam& r, const RescaleStats& stats) {
  VectorXd gp = natural_grad(to_local(g, basis, frames), r);
  for (int mu = 0; mu < basis.n_funcs(); ++mu) {
    const BasisFunction& f = basis.funcs[mu];
    const VectorXd& lam = stats_vec(stats.scale, s.atomic_numbers.at(f.atom), "scale");
    if (f.tau >= lam.size())
      throw contract_error("adapter_grad: statistics dimension mismatch");
    gp(mu) /= lam(f.tau);
  }
  return gp;
}

VectorXd adapter_pullback(const VectorXd& g_scaled, const MolecularStructure& s,
                          const BasisSet& basis, const FrameSet& frames,
                          const NatReparam& r, const RescaleStats& stats) {
  if (g_scaled.size() != basis.n_funcs())
    throw contract_error("adapter_pullback: vector length does not match the basis");
  VectorXd gs = g_scaled;
  for (int mu = 0; mu < basis.n_funcs(); ++mu) {
    const BasisFunction& f = basis.funcs[mu];
    const VectorXd& lam = stats_vec(stats.scale, s.atomic_numbers.at(f.atom), "scale");
    if (f.tau >= lam.size())
      throw contract_error("adapter_pullback: statistics dimension mismatch");
    gs(mu) *= lam(f.tau);
  }
  return from_local(natural_pullback(gs, r), basis, frames);
}

double atom_ref(const VectorXd& reparam, const MolecularStructure& s,
                const BasisSet& basis, const RescaleStats& stats) {
  if (reparam.size() != basis.n_funcs())
    throw contract_error("atom_ref: vector length does not match the basis");
  double e = stats.global_bias;
  for (int z : s.atomic_numbers) {
    const auto it = stats.element_bias.find(z);
    if (it != stats.element_bias.end()) e += it->second;
  }
  for (int mu = 0; mu < basis.n_funcs(); ++mu) {
    const BasisFunction& f = basis.funcs[mu];
    const VectorXd& gbar = stats_vec(stats.grad_mean, s.atomic_numbers.at(f.atom),
                                     "gradient-mean");
    if (f.tau >= gbar.size())
      throw contract_error("atom_ref: statistics dimension mismatch");
    e += gbar(f.tau) * reparam(mu);
  }
  return e;
}

VectorXd atom_ref_grad(const MolecularStructure& s, const BasisSet& basis,
                       const RescaleStats& stats) {
  VectorXd g(basis.n_funcs());
  for (int mu = 0; mu < basis.n_funcs(); ++mu) {
    const BasisFunction& f = basis.funcs[mu];
    const VectorXd& gbar = stats_vec(stats.grad_mean, s.atomic_numbers.at(f.atom),
                                     "gradient-mean");
    if (f.tau >= gbar.size())
      throw contract_error("atom_ref_grad: statistics dimension mismatch");
    g(mu) = gbar(f.tau);
  }
  return g;
}

VectorXd atom_ref_pullback(const MolecularStructure& s, const BasisSet& basis,
                           const FrameSet& frames, const NatReparam& r,
                           const RescaleStats& stats) {
  return from_local(natural_pullback(atom_ref_grad(s, basis, stats), r), basis, frames);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string stats_to_json(const RescaleStats& stats) {
  auto as_list = [](const VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  nlohmann::ordered_json j;
  j["schema"] = 1;
  j["kind"] = "rescale-stats";
  j["s_grad"] = stats.s_grad;
  j["s_coeff"] = stats.s_coeff;
  j["global_bias"] = stats.global_bias;
  nlohmann::ordered_json elems = nlohmann::ordered_json::array();
  for (const auto& [z, mean] : stats.coeff_mean) {
    if (!stats.scale.count(z) || !stats.grad_mean.count(z) ||
        stats.scale.at(z).size() != mean.size() ||
        stats.grad_mean.at(z).size() != mean.size())
      throw contract_error("stats_to_json: inconsistent per-element tables");
    nlohmann::ordered_json e;
    e["z"] = z;
    e["coeff_mean"] = as_list(mean);
    e["scale"] = as_list(stats.scale.at(z));
    e["grad_mean"] = as_list(stats.grad_mean.at(z));
    elems.push_back(std::move(e));
  }
  j["elements"] = std::move(elems);
  nlohmann::ordered_json biases = nlohmann::ordered_json::array();
  for (const auto& [z, b] : stats.element_bias) {
    nlohmann::ordered_json e;
    e["z"] = z;
    e["bias"] = b;
    biases.push_back(std::move(e));
  }
  j["element_bias"] = std::move(biases);
  return j.dump(2) + "\n";
}

RescaleStats stats_from_json(const std::string& text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(origin + ": invalid JSON: " + e.what());
  }
  try {
    if (!j.is_object() || j.value("kind", std::string()) != "rescale-stats")
      throw config_error(origin + ": not a rescale-stats file");
    if (j.at("schema").get<int>() != 1)
      throw config_error(origin + ": unsupported rescale-stats schema");
    RescaleStats st;
    st.s_grad = j.at("s_grad").get<double>();
    st.s_coeff = j.at("s_coeff").get<double>();
    st.global_bias = j.at("global_bias").get<double>();
    auto as_vec = [](const std::vector<double>& v) {
      return Eigen::Map<const VectorXd>(v.data(), static_cast<int>(v.size())).eval();
    };
    for (const auto& e : j.at("elements")) {
      const int z = e.at("z").get<int>();
      const auto mean = e.at("coeff_mean").get<std::vector<double>>();
      const auto lam = e.at("scale").get<std::vector<double>>();
      const auto gbar = e.at("grad_mean").get<std::vector<double>>();
      if (lam.size() != mean.size() || gbar.size() != mean.size())
        throw config_error(origin + ": per-element tables have mismatched lengths");
      st.coeff_mean[z] = as_vec(mean);
      st.scale[z] = as_vec(lam);
      st.grad_mean[z] = as_vec(gbar);
    }
    for (const auto& e : j.at("element_bias"))
      st.element_bias[e.at("z").get<int>()] = e.at("bias").get<double>();
    return st;
  } catch (const nlohmann::json::exception& e) {
    throw config_error(origin + ": malformed rescale-stats: " + e.what());
  }
}

void save_stats(const RescaleStats& stats, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw config_error("cannot open for writing: " + path);
  out << stats_to_json(stats);
  out.flush();
  if (!out.good()) throw config_error("failed while writing: " + path);
}

RescaleStats load_stats(const std::string& path) {
  return stats_from_json(read_text_file(path), path);
}

}  // namespace ofdft::features
