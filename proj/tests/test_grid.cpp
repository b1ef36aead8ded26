#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracle_utils.hpp"
#include "ofdft/grid.hpp"
#include "ofdft/integrals.hpp"
#include "ofdft/molsys.hpp"

using namespace ofdft;

namespace {

const char* kDataDir = OFDFT_SOURCE_DIR "/data";

MolecularStructure h2(double r = 1.4) {
  return make_structure({Vector3d(0, 0, 0), Vector3d(0, 0, r)}, {1, 1});
}

MolecularStructure single_atom(int z) {
  return make_structure({Vector3d(0.2, -0.1, 0.4)}, {z});
}

// Exact unit-sphere average of x^i y^j z^k: zero for any odd power, else
// (i-1)!!(j-1)!!(k-1)!! / (i+j+k+1)!!.
double sphere_average(int i, int j, int k) {
  if (i % 2 || j % 2 || k % 2) return 0.0;
  auto dfact = [](int n) {
    double v = 1.0;
    for (int q = n; q > 1; q -= 2) v *= q;
    return v;
  };
  return dfact(i - 1) * dfact(j - 1) * dfact(k - 1) / dfact(i + j + k + 1);
}

BasisSet h2_density_basis(const MolecularStructure& s) {
  auto defs = read_basis_file(std::string(kDataDir) + "/basis/minimal.bas");
  return build_density_basis(s, 2.5, derive_anchors(defs), 2);
}

// A tiny grid with hand-picked points; weights are placeholders for calls
// that only read amplitudes.
grid::Grid probe_grid(const std::vector<Vector3d>& pts) {
  grid::Grid g;
  g.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) g.points.row(i) = pts[i].transpose();
  g.weights = VectorXd::Ones(g.points.rows());
  return g;
}

}  // namespace

TEST_CASE("lebedev rules: counts, normalization, polynomial exactness") {
  const int orders[] = {110, 194, 302};
  const int degrees[] = {17, 23, 29};
  for (int t = 0; t < 3; ++t) {
    CAPTURE(orders[t]);
    MatrixXd pts;
    VectorXd wts;
    REQUIRE(grid::lebedev_rule(orders[t], pts, wts));
    CHECK(pts.rows() == orders[t]);
    CHECK(wts.sum() == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(wts.minCoeff() > 0.0);
    for (int i = 0; i < pts.rows(); ++i)
      CHECK(pts.row(i).norm() == doctest::Approx(1.0).epsilon(1e-13));

    // every even monomial within the rule's degree integrates exactly
    const int half = degrees[t] / 2;
    for (int a = 0; a <= half; ++a)
      for (int b = 0; a + b <= half; ++b)
        for (int c = 0; a + b + c <= half; ++c) {
          double acc = 0.0;
          for (int i = 0; i < pts.rows(); ++i)
            acc += wts[i] * std::pow(pts(i, 0), 2 * a) * std::pow(pts(i, 1), 2 * b) *
                   std::pow(pts(i, 2), 2 * c);
          CAPTURE(a);
          CAPTURE(b);
          CAPTURE(c);
          CHECK(acc == doctest::Approx(sphere_average(2 * a, 2 * b, 2 * c)).epsilon(5e-12));
        }
    // odd powers vanish by symmetry
    double odd = 0.0;
    for (int i = 0; i < pts.rows(); ++i)
      odd += wts[i] * pts(i, 0) * sq(pts(i, 1));
    CHECK(std::abs(odd) < 1e-14);
  }
  MatrixXd pts;
  VectorXd wts;
  CHECK_FALSE(grid::lebedev_rule(17, pts, wts));
}

TEST_CASE("grid levels map to documented node counts") {
  CHECK(grid::radial_count(grid::Level::coarse) == 40);
  CHECK(grid::radial_count(grid::Level::standard) == 75);
  CHECK(grid::radial_count(grid::Level::fine) == 120);
  CHECK(grid::angular_count(grid::Level::coarse) == 110);
  CHECK(grid::angular_count(grid::Level::standard) == 194);
  CHECK(grid::angular_count(grid::Level::fine) == 302);
  CHECK(grid::parse_level("standard") == grid::Level::standard);
  CHECK_THROWS_AS(grid::parse_level("ultrafine"), config_error);
}

TEST_CASE("becke partition: partition of unity and cell shapes") {
  auto one = single_atom(2);
  CHECK(grid::becke_partition(one, Vector3d(5, 5, 5))(0) == 1.0);

  auto s = h2();
  RngStream rng(91);
  for (int trial = 0; trial < 50; ++trial) {
    Vector3d r(6 * rng.uniform() - 3, 6 * rng.uniform() - 3, 6 * rng.uniform() - 3);
    VectorXd cw = grid::becke_partition(s, r);
    CHECK(cw.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cw.minCoeff() >= 0.0);
  }
  // symmetric midpoint splits evenly; a nucleus owns its own site
  VectorXd mid = grid::becke_partition(s, Vector3d(0.3, -0.2, 0.7));
  CHECK(mid(0) == doctest::Approx(0.5).epsilon(1e-12));
  VectorXd at_a = grid::becke_partition(s, Vector3d(0, 0, 0));
  CHECK(at_a(0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(at_a(1) == doctest::Approx(0.0).epsilon(1e-14));

  // size adjustment: the larger Li cell reaches past the LiH midpoint
  auto lih = make_structure({Vector3d(0, 0, 0), Vector3d(0, 0, 3.0)}, {3, 1});
  VectorXd lih_mid = grid::becke_partition(lih, Vector3d(0, 0, 1.5));
  CHECK(lih_mid.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lih_mid(0) > 0.6);
}

TEST_CASE("molecular grid: counts and strictly positive weights") {
  auto s = h2();
  auto coarse = grid::build_grid(s, grid::Level::coarse);
  CHECK(coarse.n_points() == 2 * 40 * 110);
  auto standard = grid::build_grid(s, grid::Level::standard);
  CHECK(standard.n_points() == 2 * 75 * 194);
  auto fine = grid::build_grid(s, grid::Level::fine);
  CHECK(fine.n_points() == 2 * 120 * 302);
  CHECK(coarse.weights.minCoeff() > 0.0);
  CHECK(standard.weights.minCoeff() > 0.0);
  CHECK(fine.weights.minCoeff() > 0.0);
}

TEST_CASE("normalized gaussians integrate to one at level standard") {
  // single-center grid, exponents spanning the He density-basis range
  auto he = grid::build_grid(single_atom(2), grid::Level::standard);
  auto hes = single_atom(2);
  for (double alpha : {0.19, 1.9, 12.7}) {
    double total = 0.0;
    const double norm = std::pow(alpha / M_PI, 1.5);
    for (int g = 0; g < he.n_points(); ++g) {
      const Vector3d r = he.points.row(g).transpose() - hes.coords[0];
      total += he.weights[g] * norm * std::exp(-alpha * r.squaredNorm());
    }
    CAPTURE(alpha);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-7));
  }

  // two-center H2 grid: Becke partition must not lose or double count;
  // exponents span the H density-basis range, plus one bond-centered case
  auto s = h2();
  auto g2 = grid::build_grid(s, grid::Level::standard);
  auto charge = [&](const Vector3d& c, double alpha) {
    const double norm = std::pow(alpha / M_PI, 1.5);
    double total = 0.0;
    for (int g = 0; g < g2.n_points(); ++g) {
      const Vector3d r = g2.points.row(g).transpose() - c;
      total += g2.weights[g] * norm * std::exp(-alpha * r.squaredNorm());
    }
    return total;
  };
  for (double alpha : {0.08, 0.5, 3.4}) {
    CAPTURE(alpha);
    CHECK(charge(Vector3d(0, 0, 0), alpha) == doctest::Approx(1.0).epsilon(3e-7));
    CHECK(charge(Vector3d(0, 0, 1.4), alpha) == doctest::Approx(1.0).epsilon(3e-7));
  }
  // the sharpest H-range exponent stresses the angular resolution of the
  // cell boundary; the residual is ~7e-7 at standard and drops below 1e-7
  // at fine
  CHECK(charge(Vector3d(0, 0, 0), 7.0) == doctest::Approx(1.0).epsilon(2e-6));
  CHECK(charge(Vector3d(0, 0, 0.7), 1.1) == doctest::Approx(1.0).epsilon(1e-7));

  auto gf = grid::build_grid(s, grid::Level::fine);
  double fine_total = 0.0;
  const double norm7 = std::pow(7.0 / M_PI, 1.5);
  for (int g = 0; g < gf.n_points(); ++g) {
    const Vector3d r = gf.points.row(g).transpose();
    fine_total += gf.weights[g] * norm7 * std::exp(-7.0 * r.squaredNorm());
  }
  CHECK(fine_total == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("amplitude tables match independent pointwise evaluation") {
  auto s = h2();
  auto basis = h2_density_basis(s);
  auto g = probe_grid({Vector3d(0.3, 0.1, -0.2), Vector3d(-0.4, 0.9, 1.1),
                       Vector3d(0.05, -0.3, 1.6)});
  auto amps = grid::amplitudes(basis, s, g);
  REQUIRE(amps.values.rows() == 3);
  REQUIRE(amps.values.cols() == basis.n_funcs());
  for (int gp = 0; gp < 3; ++gp)
    for (int mu = 0; mu < basis.n_funcs(); ++mu) {
      const auto& rec = basis.funcs[mu];
      const Shell& sh = basis.shells[rec.shell];
      const double ref = oracle::shell_value(sh, s.coords[sh.atom_index], rec.m,
                                             g.points.row(gp).transpose());
      CHECK(amps.values(gp, mu) == doctest::Approx(ref).epsilon(1e-12));
    }
}

TEST_CASE("amplitude gradients agree with central differences") {
  auto s = h2();
  auto basis = h2_density_basis(s);
  const std::vector<Vector3d> pts = {Vector3d(0.25, -0.15, 0.6), Vector3d(-0.7, 0.4, 1.9)};
  auto amps = grid::amplitudes(basis, s, probe_grid(pts));
  const double h = 1e-5;
  for (std::size_t ip = 0; ip < pts.size(); ++ip)
    for (int dim = 0; dim < 3; ++dim) {
      Vector3d plus = pts[ip], minus = pts[ip];
      plus[dim] += h;
      minus[dim] -= h;
      auto ap = grid::amplitudes(basis, s, probe_grid({plus}));
      auto am = grid::amplitudes(basis, s, probe_grid({minus}));
      for (int mu = 0; mu < basis.n_funcs(); ++mu) {
        const double fd = (ap.values(0, mu) - am.values(0, mu)) / (2 * h);
        CHECK(amps.gradients[dim](ip, mu) == doctest::Approx(fd).epsilon(1e-5));
      }
    }
}

TEST_CASE("eval_density: linearity, single-function case, dimension guard") {
  auto s = h2();
  auto basis = h2_density_basis(s);
  auto g = probe_grid({Vector3d(0.3, 0.1, -0.2), Vector3d(0.0, 0.0, 0.7),
                       Vector3d(-1.0, 0.2, 2.2)});

  auto zero = grid::eval_density(VectorXd::Zero(basis.n_funcs()), basis, s, g);
  CHECK(zero.rho.cwiseAbs().maxCoeff() == 0.0);
  CHECK(zero.grad.cwiseAbs().maxCoeff() == 0.0);

  const int mu = basis.n_funcs() / 2;
  VectorXd p = VectorXd::Zero(basis.n_funcs());
  p[mu] = 0.7;
  auto one = grid::eval_density(p, basis, s, g);
  for (int gp = 0; gp < 3; ++gp) {
    const auto& rec = basis.funcs[mu];
    const Shell& sh = basis.shells[rec.shell];
    const double ref = 0.7 * oracle::shell_value(sh, s.coords[sh.atom_index], rec.m,
                                                 g.points.row(gp).transpose());
    CHECK(one.rho[gp] == doctest::Approx(ref).epsilon(1e-12));
  }

  CHECK_THROWS_AS(grid::eval_density(VectorXd::Zero(3), basis, s, g), contract_error);
}

TEST_CASE("grid quadrature of a fitted-style density matches p dot w") {
  auto s = h2();
  auto basis = h2_density_basis(s);
  auto g = grid::build_grid(s, grid::Level::standard);
  const VectorXd w = integrals::normalization_vector(basis);

  RngStream rng(1234);
  VectorXd p(basis.n_funcs());
  for (int mu = 0; mu < p.size(); ++mu) p[mu] = rng.normal();
  // give the density a definite total charge scale
  p = p * (2.0 / std::max(std::abs(p.dot(w)), 1e-3));

  auto rho = grid::eval_density(p, basis, s, g);
  const double total = g.weights.dot(rho.rho);
  CHECK(total == doctest::Approx(p.dot(w)).epsilon(1e-6));
}

TEST_CASE("density from a symmetric matrix matches the explicit double sum") {
  auto s = h2();
  auto defs = read_basis_file(std::string(kDataDir) + "/basis/minimal.bas");
  auto obasis = build_orbital_basis(s, defs);
  auto g = probe_grid({Vector3d(0.2, 0.3, 0.5), Vector3d(-0.3, 0.8, 1.2)});
  auto amps = grid::amplitudes(obasis, s, g);

  const int nb = obasis.n_funcs();
  RngStream rng(7);
  MatrixXd gamma(nb, nb);
  for (int i = 0; i < nb; ++i)
    for (int j = 0; j <= i; ++j) gamma(i, j) = gamma(j, i) = rng.normal();

  VectorXd rho;
  MatrixXd grad;
  grid::density_from_matrix(amps, gamma, rho, grad);
  for (int gp = 0; gp < 2; ++gp) {
    double ref = 0.0;
    Vector3d dref = Vector3d::Zero();
    for (int a = 0; a < nb; ++a)
      for (int b = 0; b < nb; ++b) {
        ref += gamma(a, b) * amps.values(gp, a) * amps.values(gp, b);
        for (int dim = 0; dim < 3; ++dim)
          dref[dim] += 2.0 * gamma(a, b) * amps.gradients[dim](gp, a) * amps.values(gp, b);
      }
    CHECK(rho[gp] == doctest::Approx(ref).epsilon(1e-12));
    for (int dim = 0; dim < 3; ++dim)
      CHECK(grad(gp, dim) == doctest::Approx(dref[dim]).epsilon(1e-11));
  }

  MatrixXd bad = MatrixXd::Zero(nb + 1, nb + 1);
  VectorXd r2;
  MatrixXd g2;
  CHECK_THROWS_AS(grid::density_from_matrix(amps, bad, r2, g2), contract_error);
}
