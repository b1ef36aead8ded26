#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "ofdft/functionals.hpp"
#include "ofdft/grid.hpp"
#include "ofdft/integrals.hpp"
#include "ofdft/ksdft.hpp"
#include "ofdft/molsys.hpp"

using namespace ofdft;

namespace {

const char* kBasisPath = OFDFT_SOURCE_DIR "/data/basis/minimal.bas";

// Independent reference totals from tools/oracles/scf_reference.py
// (closed-form s integrals + the same published quadrature constants).
constexpr double kH2ReferenceTotal = -1.025010204918;
constexpr double kHeReferenceTotal = -2.657311972403;

MolecularStructure h2(double r = 1.4) {
  return make_structure({Vector3d(0, 0, 0.5 * r), Vector3d(0, 0, -0.5 * r)}, {1, 1});
}

MolecularStructure helium() {
  return make_structure({Vector3d(0, 0, 0)}, {2});
}

MolecularStructure lih(double r = 3.0) {
  return make_structure({Vector3d(0, 0, 0), Vector3d(0, 0, r)}, {3, 1});
}

struct Workspace {
  MolecularStructure s;
  ElementShellTable defs;
  BasisSet obasis;
  BasisSet dbasis;
  IntegralTables tables;
  grid::Grid g;

  explicit Workspace(const MolecularStructure& structure,
                     grid::Level level = grid::Level::standard)
      : s(structure), defs(read_basis_file(kBasisPath)) {
    obasis = build_orbital_basis(s, defs);
    dbasis = build_density_basis(s, 2.5, derive_anchors(defs), 2);
    tables = build_tables(s, obasis, dbasis, /*need_eri=*/true);
    g = grid::build_grid(s, level);
  }
};

}  // namespace

TEST_CASE("nuclear repulsion") {
  CHECK(ksdft::nuclear_repulsion(h2()) == doctest::Approx(1.0 / 1.4).epsilon(1e-12));
  CHECK(ksdft::nuclear_repulsion(helium()) == 0.0);
  CHECK(ksdft::nuclear_repulsion(lih()) == doctest::Approx(3.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("scf reproduces the independent reference energies") {
  for (const auto& [factory, reference] :
       {std::pair{+[] { return h2(); }, kH2ReferenceTotal},
        std::pair{+[] { return helium(); }, kHeReferenceTotal}}) {
    Workspace w(factory());
    ksdft::ScfOptions opts;
    const ksdft::ScfTrajectory traj = ksdft::scf_solve(w.s, w.obasis, w.tables, w.g, opts);
    REQUIRE(traj.converged);
    CHECK(traj.final_step + 1 <= 30);
    const double total = traj.electronic_energy + traj.nuclear_energy;
    CHECK(std::abs(total - reference) <= 1e-6);
  }
}

TEST_CASE("scf trajectory internal consistency on LiH") {
  Workspace w(lih());
  ksdft::ScfOptions opts;
  const ksdft::ScfTrajectory traj = ksdft::scf_solve(w.s, w.obasis, w.tables, w.g, opts);
  REQUIRE(traj.converged);
  CHECK(traj.final_step + 1 <= 30);

  for (int k = 0; k <= traj.final_step; ++k) {
    const ksdft::ScfStep& st = traj.steps[k];
    // orthonormal occupied orbitals and the right electron count
    const MatrixXd gram = st.coeffs.transpose() * w.tables.S * st.coeffs;
    CHECK((gram - MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() <=
          1e-10);
    CHECK(std::abs((st.gamma_out.array() * w.tables.S.array()).sum() - w.s.n_electrons) <=
          1e-10);
    // mixing weights are an affine combination
    CHECK(std::abs(st.diis_weights.sum() - 1.0) <= 1e-8);
    CHECK(st.window_first >= 0);
    CHECK(st.window_first + st.diis_weights.size() == k + 1);
  }

  // energy settles monotonically near the end
  const int last = traj.final_step;
  for (int k = std::max(1, last - 4); k <= last; ++k)
    CHECK(traj.steps[k].energy <= traj.steps[k - 1].energy + 1e-9);

  // converged residual matches the reported one
  CHECK(traj.steps[last].diis_residual <= 1e-6);
}

TEST_CASE("density fitting reproduces Coulomb data of the converged density") {
  Workspace w(h2());
  const ksdft::ScfTrajectory traj =
      ksdft::scf_solve(w.s, w.obasis, w.tables, w.g, ksdft::ScfOptions{});
  REQUIRE(traj.converged);
  const MatrixXd& gamma = traj.steps[traj.final_step].gamma_out;

  const ksdft::DensityFit fit = ksdft::density_fit(gamma, w.tables);
  CHECK(fit.p.size() == w.dbasis.n_funcs());
  // residuals reflect how well the atom-centered density basis can absorb
  // the bond-centered orbital-product density of H2
  CHECK(fit.hartree_residual <= 5e-3);
  CHECK(fit.external_residual <= 1e-3);
  // fitted density carries nearly the full electron count
  CHECK(std::abs(fit.p.dot(w.tables.w) - 2.0) <= 2.5e-3);

  // fit reproduces the Hartree energy of the matrix density
  const MatrixXd J = w.tables.eri->contract(gamma);
  const double hartree_gamma = 0.5 * (J.array() * gamma.array()).sum();
  const double hartree_p = 0.5 * fit.p.dot(w.tables.Wt * fit.p);
  CHECK(std::abs(hartree_gamma - hartree_p) <= 1e-3);
}

TEST_CASE("label builder: effective potential matches finite differences") {
  Workspace w(h2(), grid::Level::coarse);
  ksdft::LabelBuilder lb(w.s, w.obasis, w.dbasis, w.tables, w.g,
                         functionals::Kind::lda_x, functionals::GgaParams{});

  RngStream rng(91);
  VectorXd p(w.dbasis.n_funcs());
  for (int mu = 0; mu < p.size(); ++mu)
    p[mu] = w.dbasis.funcs[mu].l == 0 ? 0.8 + 0.2 * rng.uniform() : 0.002 * rng.normal();

  const VectorXd grad = lb.effective_potential(p);
  const double h = 1e-5;
  for (int trial = 0; trial < 8; ++trial) {
    VectorXd dir(p.size());
    for (int mu = 0; mu < p.size(); ++mu) dir[mu] = rng.normal();
    dir.normalize();
    const double fd =
        (lb.effective_energy(p + h * dir) - lb.effective_energy(p - h * dir)) / (2 * h);
    const double an = grad.dot(dir);
    CHECK(std::abs(fd - an) <= 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("kinetic labels: value identities and vW proximity on H2") {
  Workspace w(h2());
  const ksdft::ScfTrajectory traj =
      ksdft::scf_solve(w.s, w.obasis, w.tables, w.g, ksdft::ScfOptions{});
  REQUIRE(traj.converged);
  ksdft::LabelBuilder lb(w.s, w.obasis, w.dbasis, w.tables, w.g,
                         functionals::Kind::lda_x, functionals::GgaParams{});

  const int k = traj.final_step;
  const MatrixXd& gamma = traj.steps[k].gamma_out;
  const VectorXd p = ksdft::density_fit(gamma, w.tables).p;
  const double orbital_kinetic = (w.tables.T.array() * gamma.array()).sum();

  const double ts = lb.value_label(traj, k, p, ksdft::Variant::ts);
  // exact-fit limit: ts equals the orbital kinetic energy up to the fit error
  CHECK(std::abs(ts - orbital_kinetic) <= 5e-3);

  // residual decomposition is exact by construction
  const double ts_res = lb.value_label(traj, k, p, ksdft::Variant::ts_res);
  CHECK(std::abs(ts_res + lb.apbe_energy(p) - ts) <= 1e-12);

  // etxc / etot assemble the same ingredients
  const double etxc = lb.value_label(traj, k, p, ksdft::Variant::etxc);
  CHECK(std::abs(etxc - orbital_kinetic - lb.xc_energy_of_gamma(gamma)) <= 1e-12);
  const double etot = lb.value_label(traj, k, p, ksdft::Variant::etot);
  const double total_ref = traj.electronic_energy + traj.nuclear_energy;
  CHECK(std::abs(etot - total_ref) <= 5e-3);  // fit error in Hartree + external parts

  // single-orbital system: the von Weizsaecker functional of the exact
  // orbital density equals the orbital kinetic energy (quadrature only)
  grid::DensityOnGrid d;
  const grid::AmplitudeTable oamps = grid::amplitudes(w.obasis, w.s, w.g);
  grid::density_from_matrix(oamps, gamma, d.rho, d.grad);
  const functionals::FunctionalResult vw =
      functionals::evaluate(functionals::Kind::vw, w.g, d);
  CHECK(std::abs(vw.value - orbital_kinetic) <= 5e-4);
}

TEST_CASE("gradient labels: first build and converged stationarity") {
  Workspace w(lih());
  const ksdft::ScfTrajectory traj =
      ksdft::scf_solve(w.s, w.obasis, w.tables, w.g, ksdft::ScfOptions{});
  REQUIRE(traj.converged);
  ksdft::LabelBuilder lb(w.s, w.obasis, w.dbasis, w.tables, w.g,
                         functionals::Kind::lda_x, functionals::GgaParams{});

  const int final = traj.final_step;
  std::vector<VectorXd> fitted(final + 2);
  for (int j = 0; j <= final; ++j)
    fitted[j] = ksdft::density_fit(traj.gamma_in(j), w.tables).p;
  fitted[final + 1] = ksdft::density_fit(traj.steps[final].gamma_out, w.tables).p;

  // build 0 has a single vanilla term: label is minus the effective potential
  // of the starting density
  const VectorXd g0 =
      lb.gradient_label(traj, 0, fitted, fitted[1], ksdft::Variant::ts);
  CHECK((g0 + lb.effective_potential(fitted[0])).cwiseAbs().maxCoeff() <= 1e-12);

  // converged sample: projected gradient of ts + E_eff vanishes
  const VectorXd& p_star = fitted[final + 1];
  const VectorXd grad_ts =
      lb.gradient_label(traj, final, fitted, p_star, ksdft::Variant::ts);
  const VectorXd total = grad_ts + lb.effective_potential(p_star);
  const VectorXd& wvec = w.tables.w;
  const VectorXd projected = total - wvec * (wvec.dot(total) / wvec.squaredNorm());
  CHECK(projected.cwiseAbs().maxCoeff() <= 1e-4);

  // variant wiring
  const VectorXd g_res =
      lb.gradient_label(traj, final, fitted, p_star, ksdft::Variant::ts_res);
  CHECK((g_res - (grad_ts - lb.apbe_gradient(p_star))).cwiseAbs().maxCoeff() <= 1e-12);
  const VectorXd g_etot =
      lb.gradient_label(traj, final, fitted, p_star, ksdft::Variant::etot);
  CHECK((g_etot - (grad_ts + lb.effective_potential(p_star))).cwiseAbs().maxCoeff() <=
        1e-12);
}

TEST_CASE("initial densities carry the right charge") {
  Workspace w(lih());
  const VectorXd p_hcore = ksdft::hcore_init(w.s, w.obasis, w.tables);
  CHECK(p_hcore.size() == w.dbasis.n_funcs());
  CHECK(std::abs(p_hcore.dot(w.tables.w) - 4.0) <= 1e-2);

  const ElementShellTable defs = read_basis_file(kBasisPath);
  const VectorXd p_sad = ksdft::sad_init(w.s, defs, 2.5, derive_anchors(defs), 2);
  CHECK(p_sad.size() == w.dbasis.n_funcs());
  CHECK(std::abs(p_sad.dot(w.tables.w) - 4.0) <= 1e-10);
  for (int mu = 0; mu < p_sad.size(); ++mu)
    if (w.dbasis.funcs[mu].l != 0) CHECK(p_sad[mu] == 0.0);

  // identical atoms get identical templates
  const MolecularStructure hh = h2();
  const VectorXd p_hh = ksdft::sad_init(hh, defs, 2.5, derive_anchors(defs), 2);
  const BasisSet db_hh = build_density_basis(hh, 2.5, derive_anchors(defs), 2);
  const int half = db_hh.n_funcs() / 2;
  CHECK((p_hh.head(half) - p_hh.tail(half)).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(std::abs(p_hh.dot(build_tables(hh, build_orbital_basis(hh, defs), db_hh, false).w) -
                 2.0) <= 1e-10);
}

TEST_CASE("variant names round trip") {
  using ksdft::Variant;
  for (Variant v : {Variant::ts, Variant::ts_res, Variant::etxc, Variant::etot})
    CHECK(ksdft::parse_variant(ksdft::variant_name(v)) == v);
  CHECK_THROWS_AS(ksdft::parse_variant("tss"), config_error);
}

TEST_CASE("dataset generation, roundtrip, determinism") {
  const ElementShellTable defs = read_basis_file(kBasisPath);
  const std::vector<MolecularStructure> confs = {h2(1.35), h2(1.45)};
  ksdft::DatasetOptions opts;
  opts.level = grid::Level::coarse;
  std::vector<int> skipped;
  const ksdft::Dataset ds = ksdft::generate_dataset(confs, defs, opts, &skipped);
  CHECK(skipped.empty());
  REQUIRE(ds.structures.size() == 2);
  CHECK(ds.variant == "ts-res");
  REQUIRE(!ds.samples.empty());

  int ground = 0;
  for (const auto& sample : ds.samples) {
    CHECK(sample.p.size() == ds.structures[sample.structure_id].n_density_funcs);
    CHECK(sample.grad.size() == sample.p.size());
    if (sample.is_ground_state) ++ground;
  }
  CHECK(ground == 2);

  const std::string path_a = "/tmp/ofdft_ds_a.bin";
  const std::string path_b = "/tmp/ofdft_ds_b.bin";
  ksdft::write_dataset(ds, path_a);
  const ksdft::Dataset back = ksdft::read_dataset(path_a);
  REQUIRE(back.samples.size() == ds.samples.size());
  REQUIRE(back.structures.size() == ds.structures.size());
  CHECK(back.variant == ds.variant);
  CHECK(back.basis_hash == ds.basis_hash);
  CHECK(back.density_hash == ds.density_hash);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].structure_id == ds.samples[i].structure_id);
    CHECK(back.samples[i].step == ds.samples[i].step);
    CHECK(back.samples[i].is_ground_state == ds.samples[i].is_ground_state);
    CHECK(back.samples[i].value == ds.samples[i].value);
    CHECK((back.samples[i].p - ds.samples[i].p).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.samples[i].grad - ds.samples[i].grad).cwiseAbs().maxCoeff() == 0.0);
  }
  for (std::size_t i = 0; i < ds.structures.size(); ++i) {
    CHECK(back.structures[i].s.atomic_numbers == ds.structures[i].s.atomic_numbers);
    CHECK(back.structures[i].s.n_electrons == ds.structures[i].s.n_electrons);
    for (int a = 0; a < ds.structures[i].s.n_atoms(); ++a)
      CHECK((back.structures[i].s.coords[a] - ds.structures[i].s.coords[a]).norm() == 0.0);
  }

  // regenerating and rewriting is byte-identical
  const ksdft::Dataset ds2 = ksdft::generate_dataset(confs, defs, opts, nullptr);
  ksdft::write_dataset(ds2, path_b);
  CHECK(fnv1a64_file(path_a) == fnv1a64_file(path_b));

  std::remove(path_a.c_str());
  std::remove(path_b.c_str());
}

TEST_CASE("energy filter drops early far-from-ground samples") {
  const ElementShellTable defs = read_basis_file(kBasisPath);
  const std::vector<MolecularStructure> confs = {lih()};
  ksdft::DatasetOptions opts;
  opts.level = grid::Level::coarse;
  const ksdft::Dataset full = ksdft::generate_dataset(confs, defs, opts, nullptr);
  REQUIRE(full.samples.size() >= 3);  // LiH needs several SCF steps

  ksdft::DatasetOptions tight = opts;
  tight.filter_kcal = 1e-6;
  const ksdft::Dataset trimmed = ksdft::generate_dataset(confs, defs, tight, nullptr);
  CHECK(trimmed.samples.size() < full.samples.size());

  double ground_value = 0.0;
  for (const auto& sample : trimmed.samples)
    if (sample.is_ground_state) ground_value = sample.value;
  int ground = 0;
  for (const auto& sample : trimmed.samples) {
    if (sample.is_ground_state)
      ++ground;
    else
      CHECK(std::abs(sample.value - ground_value) <= 1e-6 / kHartreeToKcal);
  }
  CHECK(ground == 1);
}

TEST_CASE("dataset reader rejects malformed files") {
  const std::string path = "/tmp/ofdft_ds_bad.bin";
  {
    std::ofstream out(path);
    out << "NOT-A-DATASET\n{}\n";
  }
  CHECK_THROWS_AS(ksdft::read_dataset(path), config_error);
  CHECK_THROWS_AS(ksdft::read_dataset("/tmp/ofdft_ds_missing.bin"), config_error);
  std::remove(path.c_str());
}
