#include "ofdft/ksdft.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace ofdft {
namespace ksdft {
namespace {

using functionals::GgaParams;
using functionals::Kind;

// Symmetric orthogonalizer S^{-1/2}; throws on near linear dependence.
MatrixXd inverse_sqrt(const MatrixXd& S) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(S);
  const VectorXd& ev = es.eigenvalues();
  if (ev.minCoeff() <= 0.0 || ev.maxCoeff() / ev.minCoeff() > 1e10)
    throw numerical_error("orbital basis is numerically linearly dependent "
                          "(overlap condition exceeds 1e10)");
  return es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

struct XcBuild {
  double energy = 0.0;
  MatrixXd matrix;  // B x B potential
};

// E_XC of the density of `gamma` on the grid, plus the orbital-basis
// potential matrix sum_g w (f_rho phi_a phi_b + 2 f_sigma grad rho .
// (grad phi_a phi_b + phi_a grad phi_b)).
XcBuild xc_of_gamma(const grid::Grid& g, const grid::AmplitudeTable& amps,
                    const MatrixXd& gamma, Kind xc, const GgaParams& gga) {
  VectorXd rho;
  MatrixXd drho;
  grid::density_from_matrix(amps, gamma, rho, drho);
  const VectorXd sigma = drho.rowwise().squaredNorm();
  VectorXd f, f_rho, f_sigma;
  functionals::kernel(xc, gga, rho, sigma, f, f_rho, f_sigma);

  XcBuild out;
  out.energy = g.weights.dot(f);
  const VectorXd a = (g.weights.array() * f_rho.array()).matrix();
  out.matrix = amps.values.transpose() * a.asDiagonal() * amps.values;
  for (int dim = 0; dim < 3; ++dim) {
    const VectorXd b =
        (2.0 * g.weights.array() * f_sigma.array() * drho.col(dim).array()).matrix();
    const MatrixXd half = amps.gradients[dim].transpose() * b.asDiagonal() * amps.values;
    out.matrix += half + half.transpose();
  }
  return out;
}

// Pulay DIIS coefficients over the recorded commutator errors; falls back to
// the most recent Fock alone if the system is degenerate.
VectorXd diis_coefficients(const std::vector<MatrixXd>& errors) {
  const int n = static_cast<int>(errors.size());
  MatrixXd lhs = MatrixXd::Zero(n + 1, n + 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j)
      lhs(i, j) = lhs(j, i) = (errors[i].array() * errors[j].array()).sum();
  lhs.block(n, 0, 1, n).setConstant(-1.0);
  lhs.block(0, n, n, 1).setConstant(-1.0);
  VectorXd rhs = VectorXd::Zero(n + 1);
  rhs[n] = -1.0;
  Eigen::FullPivLU<MatrixXd> lu(lhs);
  if (!lu.isInvertible()) {
    VectorXd last = VectorXd::Zero(n);
    last[n - 1] = 1.0;
    return last;
  }
  const VectorXd sol = lu.solve(rhs);
  return sol.head(n);
}

double kcal_to_hartree(double kcal) { return kcal / kHartreeToKcal; }

std::uint64_t hash_shell_table(const ElementShellTable& defs) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [z, shells] : defs) {
    h = fnv1a64(&z, sizeof(z), h);
    for (const auto& sh : shells) {
      h = fnv1a64(&sh.l, sizeof(sh.l), h);
      h = fnv1a64(sh.exponents.data(), sh.exponents.size() * sizeof(double), h);
      h = fnv1a64(sh.coefficients.data(), sh.coefficients.size() * sizeof(double), h);
    }
  }
  return h;
}

std::uint64_t hash_density_recipe(const ElementShellTable& defs, double beta,
                                  int l_max) {
  std::uint64_t h = hash_shell_table(defs);
  h = fnv1a64(&beta, sizeof(beta), h);
  h = fnv1a64(&l_max, sizeof(l_max), h);
  return h;
}

}  // namespace

double nuclear_repulsion(const MolecularStructure& s) {
  double e = 0.0;
  for (int a = 0; a < s.n_atoms(); ++a)
    for (int b = a + 1; b < s.n_atoms(); ++b)
      e += s.atomic_numbers[a] * s.atomic_numbers[b] /
           (s.coords[a] - s.coords[b]).norm();
  return e;
}

ScfTrajectory scf_solve(const MolecularStructure& s, const BasisSet& orbital_basis,
                        const IntegralTables& tables, const grid::Grid& g,
                        const ScfOptions& opts) {
  if (s.n_electrons % 2 != 0)
    throw contract_error("restricted SCF requires an even electron count");
  const int n_occ = s.n_electrons / 2;
  const int nb = orbital_basis.n_funcs();
  if (nb < n_occ)
    throw contract_error("orbital basis smaller than the occupation count");
  if (!tables.eri)
    throw contract_error("scf_solve needs the four-center tensor in the tables");

  const MatrixXd X = inverse_sqrt(tables.S);
  const MatrixXd hcore = tables.T + tables.Vext;
  const grid::AmplitudeTable oamps = grid::amplitudes(orbital_basis, s, g);

  ScfTrajectory traj;
  traj.nuclear_energy = nuclear_repulsion(s);

  // core-Hamiltonian starting density
  {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(X.transpose() * hcore * X);
    const MatrixXd C = (X * es.eigenvectors()).leftCols(n_occ);
    traj.gamma_init = 2.0 * C * C.transpose();
  }

  std::vector<MatrixXd> vanilla_focks, diis_errors;
  double prev_energy = 0.0;
  for (int k = 0; k < opts.max_iter; ++k) {
    const MatrixXd& gamma = traj.gamma_in(k);
    const MatrixXd J = tables.eri->contract(gamma);
    const XcBuild xc = xc_of_gamma(g, oamps, gamma, opts.xc, opts.gga);

    ScfStep st;
    st.energy = (hcore.array() * gamma.array()).sum() +
                0.5 * (J.array() * gamma.array()).sum() + xc.energy;
    st.fock = hcore + J + xc.matrix;
    st.veff = st.fock - tables.T;

    const MatrixXd err = st.fock * gamma * tables.S - tables.S * gamma * st.fock;
    st.diis_residual = err.cwiseAbs().maxCoeff();

    vanilla_focks.push_back(st.fock);
    diis_errors.push_back(err);
    if (static_cast<int>(vanilla_focks.size()) > opts.diis_depth) {
      vanilla_focks.erase(vanilla_focks.begin());
      diis_errors.erase(diis_errors.begin());
    }
    st.window_first = k + 1 - static_cast<int>(vanilla_focks.size());

    MatrixXd mixed;
    if (k < 2) {  // DIIS engages after two plain Roothaan steps
      st.diis_weights = VectorXd::Zero(vanilla_focks.size());
      st.diis_weights[vanilla_focks.size() - 1] = 1.0;
      mixed = st.fock;
    } else {
      st.diis_weights = diis_coefficients(diis_errors);
      mixed = MatrixXd::Zero(nb, nb);
      for (std::size_t j = 0; j < vanilla_focks.size(); ++j)
        mixed += st.diis_weights[j] * vanilla_focks[j];
    }

    Eigen::SelfAdjointEigenSolver<MatrixXd> es(X.transpose() * mixed * X);
    const MatrixXd C = (X * es.eigenvectors()).leftCols(n_occ);
    st.coeffs = C;
    st.orbital_energies = es.eigenvalues().head(n_occ);
    st.gamma_out = 2.0 * C * C.transpose();

    traj.steps.push_back(std::move(st));

    const ScfStep& cur = traj.steps.back();
    if (k >= 1 && std::abs(cur.energy - prev_energy) < opts.energy_tol &&
        cur.diis_residual < opts.residual_tol) {
      traj.converged = true;
      traj.final_step = k;
      traj.electronic_energy = cur.energy;
      break;
    }
    prev_energy = cur.energy;
  }
  if (!traj.converged) {
    traj.final_step = static_cast<int>(traj.steps.size()) - 1;
    traj.electronic_energy = traj.steps.back().energy;
  }
  return traj;
}

DensityFit density_fit(const MatrixXd& gamma, const IntegralTables& tables) {
  if (gamma.rows() != gamma.cols())
    throw contract_error("density_fit: gamma must be square");
  const int m = tables.n_density();
  VectorXd t(m);
  for (int mu = 0; mu < m; ++mu)
    t[mu] = (tables.Lt[mu].array() * gamma.array()).sum();
  const double ext = (tables.Vext.array() * gamma.array()).sum();

  MatrixXd A(m + 1, m);
  A.topRows(m) = tables.Wt;
  A.bottomRows(1) = tables.vext.transpose();
  VectorXd b(m + 1);
  b.head(m) = t;
  b[m] = ext;

  DensityFit out;
  Eigen::JacobiSVD<MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();
  if (sv.minCoeff() <= 0.0 || sv.maxCoeff() / sv.minCoeff() > 1e12) {
    out.regularized = true;
    const MatrixXd normal =
        A.transpose() * A + 1e-10 * MatrixXd::Identity(m, m);
    out.p = normal.ldlt().solve(A.transpose() * b);
  } else {
    out.p = svd.solve(b);
  }
  out.hartree_residual = (tables.Wt * out.p - t).norm();
  out.external_residual = std::abs(tables.vext.dot(out.p) - ext);
  return out;
}

Variant parse_variant(const std::string& name) {
  if (name == "ts") return Variant::ts;
  if (name == "ts-res") return Variant::ts_res;
  if (name == "etxc") return Variant::etxc;
  if (name == "etot") return Variant::etot;
  throw config_error("unknown variant '" + name +
                     "' (expected ts, ts-res, etxc, etot)");
}

const std::string& variant_name(Variant v) {
  static const std::string names[] = {"ts", "ts-res", "etxc", "etot"};
  return names[static_cast<int>(v)];
}

LabelBuilder::LabelBuilder(const MolecularStructure& s, const BasisSet& orbital_basis,
                           const BasisSet& density_basis, const IntegralTables& tables,
                           const grid::Grid& g, Kind xc, const GgaParams& gga)
    : s_(s),
      obasis_(orbital_basis),
      dbasis_(density_basis),
      tables_(tables),
      grid_(g),
      xc_(xc),
      gga_(gga),
      oamps_(grid::amplitudes(orbital_basis, s, g)),
      damps_(grid::amplitudes(density_basis, s, g)) {}

namespace {

// shared quadrature chain rule for a functional of a coefficient density
struct CoeffFunctional {
  double value = 0.0;
  VectorXd grad;
};

CoeffFunctional coeff_functional(const grid::Grid& g, const grid::AmplitudeTable& amps,
                                 const VectorXd& p, Kind kind, const GgaParams& gga) {
  const VectorXd rho = amps.values * p;
  MatrixXd drho(rho.size(), 3);
  for (int dim = 0; dim < 3; ++dim) drho.col(dim) = amps.gradients[dim] * p;
  const VectorXd sigma = drho.rowwise().squaredNorm();
  VectorXd f, f_rho, f_sigma;
  functionals::kernel(kind, gga, rho, sigma, f, f_rho, f_sigma);

  CoeffFunctional out;
  out.value = g.weights.dot(f);
  out.grad = amps.values.transpose() * (g.weights.array() * f_rho.array()).matrix();
  for (int dim = 0; dim < 3; ++dim)
    out.grad += amps.gradients[dim].transpose() *
                (2.0 * g.weights.array() * f_sigma.array() * drho.col(dim).array())
                    .matrix();
  return out;
}

}  // namespace

double LabelBuilder::xc_energy_of_p(const VectorXd& p) const {
  return coeff_functional(grid_, damps_, p, xc_, gga_).value;
}

VectorXd LabelBuilder::xc_potential_of_p(const VectorXd& p) const {
  return coeff_functional(grid_, damps_, p, xc_, gga_).grad;
}

double LabelBuilder::apbe_energy(const VectorXd& p) const {
  return coeff_functional(grid_, damps_, p, Kind::apbe, gga_).value;
}

VectorXd LabelBuilder::apbe_gradient(const VectorXd& p) const {
  return coeff_functional(grid_, damps_, p, Kind::apbe, gga_).grad;
}

double LabelBuilder::effective_energy(const VectorXd& p) const {
  return 0.5 * p.dot(tables_.Wt * p) + tables_.vext.dot(p) + xc_energy_of_p(p);
}

VectorXd LabelBuilder::effective_potential(const VectorXd& p) const {
  return tables_.Wt * p + tables_.vext + xc_potential_of_p(p);
}

double LabelBuilder::xc_energy_of_gamma(const MatrixXd& gamma) const {
  VectorXd rho;
  MatrixXd drho;
  grid::density_from_matrix(oamps_, gamma, rho, drho);
  const VectorXd sigma = drho.rowwise().squaredNorm();
  VectorXd f, f_rho, f_sigma;
  functionals::kernel(xc_, gga_, rho, sigma, f, f_rho, f_sigma);
  return grid_.weights.dot(f);
}

double LabelBuilder::value_label(const ScfTrajectory& traj, int k, const VectorXd& p,
                                 Variant variant) const {
  const MatrixXd& gamma = traj.steps.at(k).gamma_out;
  const double tkin = (tables_.T.array() * gamma.array()).sum();
  const double exc_c = xc_energy_of_gamma(gamma);
  switch (variant) {
    case Variant::ts:
    case Variant::ts_res: {
      if (!tables_.eri)
        throw contract_error("ts labels need the four-center tensor");
      const MatrixXd J = tables_.eri->contract(gamma);
      const double eff_c = 0.5 * (J.array() * gamma.array()).sum() + exc_c +
                           (tables_.Vext.array() * gamma.array()).sum();
      double v = tkin + eff_c - effective_energy(p);
      if (variant == Variant::ts_res) v -= apbe_energy(p);
      return v;
    }
    case Variant::etxc:
      return tkin + exc_c;
    case Variant::etot:
      return tkin + exc_c + 0.5 * p.dot(tables_.Wt * p) + tables_.vext.dot(p) +
             traj.nuclear_energy;
  }
  return 0.0;
}

VectorXd LabelBuilder::gradient_label(const ScfTrajectory& traj, int k,
                                      const std::vector<VectorXd>& fitted,
                                      const VectorXd& p, Variant variant) const {
  const ScfStep& st = traj.steps.at(k);
  const int nw = static_cast<int>(st.diis_weights.size());
  if (static_cast<int>(fitted.size()) <= st.window_first + nw - 1)
    throw contract_error("gradient_label: fitted history does not cover the "
                         "DIIS window");
  VectorXd base = VectorXd::Zero(tables_.n_density());
  for (int j = 0; j < nw; ++j)
    base -= st.diis_weights[j] * effective_potential(fitted[st.window_first + j]);
  switch (variant) {
    case Variant::ts:
      return base;
    case Variant::ts_res:
      return base - apbe_gradient(p);
    case Variant::etxc:
      return base + xc_potential_of_p(p);
    case Variant::etot:
      return base + effective_potential(p);
  }
  return base;
}

VectorXd hcore_init(const MolecularStructure& s, const BasisSet& orbital_basis,
                    const IntegralTables& tables) {
  const int n_occ = s.n_electrons / 2;
  const MatrixXd X = inverse_sqrt(tables.S);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(X.transpose() *
                                             (tables.T + tables.Vext) * X);
  const MatrixXd C = (X * es.eigenvectors()).leftCols(n_occ);
  (void)orbital_basis;
  const MatrixXd gamma = 2.0 * C * C.transpose();
  return density_fit(gamma, tables).p;
}

VectorXd sad_init(const MolecularStructure& s, const ElementShellTable& defs,
                  double beta, const AnchorTable& anchors, int l_max) {
  std::map<int, VectorXd> templates;
  for (int z : s.atomic_numbers) {
    if (templates.count(z)) continue;
    MolecularStructure atom;  // built directly: odd electron counts allowed here
    atom.coords = {Vector3d::Zero()};
    atom.atomic_numbers = {z};
    atom.n_electrons = z;
    const BasisSet obasis = build_orbital_basis(atom, defs);
    const BasisSet dbasis = build_density_basis(atom, beta, anchors, l_max);
    const IntegralTables tables =
        build_tables(atom, obasis, dbasis, /*need_eri=*/false);

    // core-Hamiltonian occupation with at most two electrons per orbital
    const MatrixXd X = inverse_sqrt(tables.S);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(X.transpose() *
                                               (tables.T + tables.Vext) * X);
    const MatrixXd C = X * es.eigenvectors();
    MatrixXd gamma = MatrixXd::Zero(obasis.n_funcs(), obasis.n_funcs());
    double remaining = z;
    for (int i = 0; i < obasis.n_funcs() && remaining > 0; ++i) {
      const double occ = std::min(2.0, remaining);
      gamma += occ * C.col(i) * C.col(i).transpose();
      remaining -= occ;
    }

    VectorXd p = density_fit(gamma, tables).p;
    // spherical template: keep l = 0 only, rescale to exactly z electrons
    for (int mu = 0; mu < dbasis.n_funcs(); ++mu)
      if (dbasis.funcs[mu].l != 0) p[mu] = 0.0;
    const double charge = p.dot(tables.w);
    if (std::abs(charge) < 1e-12)
      throw numerical_error("sad template carries no charge for element " +
                            std::to_string(z));
    templates[z] = p * (z / charge);
  }

  const BasisSet dbasis = build_density_basis(s, beta, anchors, l_max);
  VectorXd out = VectorXd::Zero(dbasis.n_funcs());
  for (int a = 0; a < s.n_atoms(); ++a) {
    const VectorXd& tpl = templates.at(s.atomic_numbers[a]);
    const auto& block = dbasis.atom_funcs[a];
    if (static_cast<int>(block.size()) != tpl.size())
      throw contract_error("sad template size mismatch");
    for (std::size_t i = 0; i < block.size(); ++i) out[block[i]] = tpl[i];
  }
  return out;
}

void write_dataset(const Dataset& ds, const std::string& path) {
  nlohmann::ordered_json header;
  header["schema"] = 1;
  header["kind"] = "ofdft-dataset";
  header["variant"] = ds.variant;
  header["filter_kcal"] = ds.filter_kcal;
  header["basis_hash"] = ds.basis_hash;
  header["density_hash"] = ds.density_hash;
  nlohmann::ordered_json structs = nlohmann::ordered_json::array();
  std::vector<int> counts(ds.structures.size(), 0);
  for (const auto& sample : ds.samples) counts.at(sample.structure_id)++;
  for (std::size_t i = 0; i < ds.structures.size(); ++i) {
    const auto& st = ds.structures[i];
    nlohmann::ordered_json rec;
    rec["z"] = st.s.atomic_numbers;
    std::vector<double> coords;
    for (const auto& c : st.s.coords) {
      coords.push_back(c[0]);
      coords.push_back(c[1]);
      coords.push_back(c[2]);
    }
    rec["coords_bohr"] = coords;
    rec["n_density_funcs"] = st.n_density_funcs;
    rec["n_samples"] = counts[i];
    structs.push_back(rec);
  }
  header["structures"] = structs;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw config_error("cannot write dataset file: " + path);
  out << "OFDFT-DATASET 1\n" << header.dump() << "\n";
  // samples are stored grouped by structure, in order
  for (std::size_t i = 0; i < ds.structures.size(); ++i)
    for (const auto& sample : ds.samples) {
      if (sample.structure_id != static_cast<int>(i)) continue;
      std::vector<double> block;
      block.reserve(2 * sample.p.size() + 3);
      for (int mu = 0; mu < sample.p.size(); ++mu) block.push_back(sample.p[mu]);
      for (int mu = 0; mu < sample.grad.size(); ++mu) block.push_back(sample.grad[mu]);
      block.push_back(sample.value);
      block.push_back(static_cast<double>(sample.step));
      block.push_back(sample.is_ground_state ? 1.0 : 0.0);
      out.write(reinterpret_cast<const char*>(block.data()),
                static_cast<std::streamsize>(block.size() * sizeof(double)));
    }
  if (!out) throw config_error("failed while writing dataset file: " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot read dataset file: " + path);
  std::string magic, header_line;
  std::getline(in, magic);
  if (magic != "OFDFT-DATASET 1")
    throw config_error(path + ": not a dataset file (bad magic line)");
  std::getline(in, header_line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(path + ": malformed dataset header: " + e.what());
  }

  Dataset ds;
  try {
    ds.variant = header.at("variant").get<std::string>();
    ds.filter_kcal = header.at("filter_kcal").get<double>();
    ds.basis_hash = header.at("basis_hash").get<std::string>();
    ds.density_hash = header.at("density_hash").get<std::string>();
    for (const auto& rec : header.at("structures")) {
      DatasetStructure st;
      st.s.atomic_numbers = rec.at("z").get<std::vector<int>>();
      const auto coords = rec.at("coords_bohr").get<std::vector<double>>();
      if (coords.size() != st.s.atomic_numbers.size() * 3)
        throw config_error(path + ": coordinate block size mismatch");
      for (std::size_t a = 0; a < st.s.atomic_numbers.size(); ++a)
        st.s.coords.emplace_back(coords[3 * a], coords[3 * a + 1], coords[3 * a + 2]);
      st.s.n_electrons = 0;
      for (int z : st.s.atomic_numbers) st.s.n_electrons += z;
      st.n_density_funcs = rec.at("n_density_funcs").get<int>();
      const int n_samples = rec.at("n_samples").get<int>();
      const int id = static_cast<int>(ds.structures.size());
      ds.structures.push_back(st);

      const std::size_t block = 2 * st.n_density_funcs + 3;
      std::vector<double> buf(block);
      for (int k = 0; k < n_samples; ++k) {
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(block * sizeof(double)));
        if (!in) throw config_error(path + ": truncated sample block");
        TrainingSample sample;
        sample.structure_id = id;
        sample.p = Eigen::Map<VectorXd>(buf.data(), st.n_density_funcs);
        sample.grad =
            Eigen::Map<VectorXd>(buf.data() + st.n_density_funcs, st.n_density_funcs);
        sample.value = buf[2 * st.n_density_funcs];
        sample.step = static_cast<int>(buf[2 * st.n_density_funcs + 1]);
        sample.is_ground_state = buf[2 * st.n_density_funcs + 2] != 0.0;
        ds.samples.push_back(std::move(sample));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw config_error(path + ": malformed dataset header: " + e.what());
  }
  return ds;
}

Dataset generate_dataset(const std::vector<MolecularStructure>& conformations,
                         const ElementShellTable& defs, const DatasetOptions& opts,
                         std::vector<int>* skipped) {
  Dataset ds;
  ds.variant = variant_name(opts.variant);
  ds.filter_kcal = opts.filter_kcal;
  ds.basis_hash = hash_hex(hash_shell_table(defs));
  ds.density_hash = hash_hex(hash_density_recipe(defs, opts.beta, opts.l_max));
  const AnchorTable anchors = derive_anchors(defs);

  for (std::size_t ci = 0; ci < conformations.size(); ++ci) {
    const MolecularStructure& s = conformations[ci];
    const BasisSet obasis = build_orbital_basis(s, defs);
    const BasisSet dbasis = build_density_basis(s, opts.beta, anchors, opts.l_max);
    const IntegralTables tables = build_tables(
        s, obasis, dbasis, /*need_eri=*/true, opts.scf.eri_cap_nbf);
    const grid::Grid g = grid::build_grid(s, opts.level);

    const ScfTrajectory traj = scf_solve(s, obasis, tables, g, opts.scf);
    if (!traj.converged) {
      if (skipped) skipped->push_back(static_cast<int>(ci));
      continue;
    }
    const LabelBuilder lb(s, obasis, dbasis, tables, g, opts.scf.xc, opts.scf.gga);

    // fitted coefficients of every density in play: inputs 0..final, plus
    // the converged output
    const int final = traj.final_step;
    std::vector<VectorXd> fitted(final + 2);
    for (int j = 0; j <= final; ++j) fitted[j] = density_fit(traj.gamma_in(j), tables).p;
    fitted[final + 1] = density_fit(traj.steps[final].gamma_out, tables).p;

    const int id = static_cast<int>(ds.structures.size());
    ds.structures.push_back({s, dbasis.n_funcs()});

    const VectorXd& p_ground = fitted[final + 1];
    const double ground_value = lb.value_label(traj, final, p_ground, opts.variant);
    const double cutoff = kcal_to_hartree(opts.filter_kcal);
    for (int k = 0; k <= final; ++k) {
      const VectorXd& p_k = fitted[k + 1];
      TrainingSample sample;
      sample.structure_id = id;
      sample.step = k;
      sample.is_ground_state = k == final;
      sample.p = p_k;
      sample.value = lb.value_label(traj, k, p_k, opts.variant);
      sample.grad = lb.gradient_label(traj, k, fitted, p_k, opts.variant);
      if (!sample.is_ground_state && std::abs(sample.value - ground_value) > cutoff)
        continue;
      ds.samples.push_back(std::move(sample));
    }
  }
  return ds;
}

}  // namespace ksdft
}  // namespace ofdft
