#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ofdft/functionals.hpp"
#include "ofdft/grid.hpp"
#include "ofdft/integrals.hpp"
#include "ofdft/molsys.hpp"

using namespace ofdft;
namespace fn = ofdft::functionals;

namespace {

const char* kDataDir = OFDFT_SOURCE_DIR "/data";
constexpr double kPi = 3.141592653589793238462643383279502884;

MolecularStructure helium() {
  return make_structure({Vector3d(0.1, -0.2, 0.3)}, {2});
}

// Analytic Gaussian density rho = c exp(-gamma r^2) about `center`, with the
// exact gradient; amplitude tables stay empty (value-only evaluation).
grid::DensityOnGrid gaussian_density(const grid::Grid& g, const Vector3d& center,
                                     double c, double gamma) {
  grid::DensityOnGrid d;
  d.rho.resize(g.n_points());
  d.grad.resize(g.n_points(), 3);
  for (int i = 0; i < g.n_points(); ++i) {
    const Vector3d r = g.points.row(i).transpose() - center;
    const double rho = c * std::exp(-gamma * r.squaredNorm());
    d.rho[i] = rho;
    d.grad.row(i) = (-2.0 * gamma * rho * r).transpose();
  }
  return d;
}

double tf_closed_form(double c, double gamma) {
  return 0.3 * std::pow(3.0 * kPi * kPi, 2.0 / 3.0) * std::pow(c, 5.0 / 3.0) *
         std::pow(3.0 * kPi / (5.0 * gamma), 1.5);
}

double slater_closed_form(double c, double gamma) {
  return -0.75 * std::pow(3.0 / kPi, 1.0 / 3.0) * std::pow(c, 4.0 / 3.0) *
         std::pow(3.0 * kPi / (4.0 * gamma), 1.5);
}

}  // namespace

TEST_CASE("zero density gives zero for every functional") {
  auto s = helium();
  auto g = grid::build_grid(s, grid::Level::coarse);
  grid::DensityOnGrid d;
  d.rho = VectorXd::Zero(g.n_points());
  d.grad = MatrixXd::Zero(g.n_points(), 3);
  for (auto kind : {fn::Kind::tf, fn::Kind::vw, fn::Kind::tf_vw19, fn::Kind::tf_vw,
                    fn::Kind::apbe, fn::Kind::lda_x, fn::Kind::pbe_x})
    CHECK(fn::evaluate(kind, g, d).value == 0.0);
}

TEST_CASE("thomas-fermi of a gaussian matches the closed form") {
  auto s = helium();
  auto g = grid::build_grid(s, grid::Level::standard);
  const double c = 0.8, gamma = 1.3;
  auto d = gaussian_density(g, s.coords[0], c, gamma);
  auto r = fn::evaluate(fn::Kind::tf, g, d);
  CHECK(r.value == doctest::Approx(tf_closed_form(c, gamma)).epsilon(1e-8));
  CHECK(r.value >= 0.0);
  CHECK(r.grad_p.size() == 0);  // no amplitude tables attached
}

TEST_CASE("von weizsacker of a gaussian equals (3 gamma / 4) N") {
  auto s = helium();
  auto g = grid::build_grid(s, grid::Level::standard);
  const double c = 0.5, gamma = 0.9;
  const double N = c * std::pow(kPi / gamma, 1.5);
  auto d = gaussian_density(g, s.coords[0], c, gamma);
  auto r = fn::evaluate(fn::Kind::vw, g, d);
  CHECK(r.value == doctest::Approx(0.75 * gamma * N).epsilon(1e-8));
  CHECK(r.value >= 0.0);

  // pointwise: constant density region contributes nothing
  VectorXd rho = VectorXd::Constant(3, 0.7), sigma = VectorXd::Zero(3);
  VectorXd f, f_rho, f_sigma;
  fn::kernel(fn::Kind::vw, fn::GgaParams(), rho, sigma, f, f_rho, f_sigma);
  CHECK(f.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("slater exchange of a gaussian matches the closed form") {
  auto s = helium();
  auto g = grid::build_grid(s, grid::Level::standard);
  const double c = 1.2, gamma = 2.0;
  auto d = gaussian_density(g, s.coords[0], c, gamma);
  auto r = fn::evaluate(fn::Kind::lda_x, g, d);
  CHECK(r.value == doctest::Approx(slater_closed_form(c, gamma)).epsilon(1e-8));
  CHECK(r.value < 0.0);
}

TEST_CASE("apbe: reduces to tf at zero gradient, bounded enhancement, monotone") {
  const fn::GgaParams par;
  // zero-gradient kernel equality
  VectorXd rho(4), zero_sigma = VectorXd::Zero(4);
  rho << 0.1, 0.7, 2.0, 9.0;
  VectorXd fa, fa_r, fa_s, ft, ft_r, ft_s;
  fn::kernel(fn::Kind::apbe, par, rho, zero_sigma, fa, fa_r, fa_s);
  fn::kernel(fn::Kind::tf, par, rho, zero_sigma, ft, ft_r, ft_s);
  for (int i = 0; i < 4; ++i) {
    CHECK(fa[i] == doctest::Approx(ft[i]).epsilon(1e-14));
    CHECK(fa_r[i] == doctest::Approx(ft_r[i]).epsilon(1e-14));
  }

  // monotone in sigma at fixed rho, and below the (1 + kappa) bound
  VectorXd one = VectorXd::Constant(1, 1.0);
  double prev = 0.0;
  for (double sigma : {0.0, 0.3, 1.0, 4.0, 20.0, 300.0}) {
    VectorXd sg = VectorXd::Constant(1, sigma), f, fr, fs;
    fn::kernel(fn::Kind::apbe, par, one, sg, f, fr, fs);
    CHECK(f[0] >= prev);
    prev = f[0];
    VectorXd tf_f, tf_fr, tf_fs;
    fn::kernel(fn::Kind::tf, par, one, VectorXd::Zero(1), tf_f, tf_fr, tf_fs);
    CHECK(f[0] <= (1.0 + par.apbe_kappa) * tf_f[0]);
  }

  // on a gaussian, the quadrature value sits between TF and (1+kappa) TF
  auto s = helium();
  auto g = grid::build_grid(s, grid::Level::standard);
  auto d = gaussian_density(g, s.coords[0], 0.6, 1.1);
  const double t_tf = fn::evaluate(fn::Kind::tf, g, d).value;
  const double t_apbe = fn::evaluate(fn::Kind::apbe, g, d).value;
  CHECK(t_apbe > t_tf);
  CHECK(t_apbe < (1.0 + par.apbe_kappa) * t_tf);
}

TEST_CASE("pbe exchange is at least as attractive as slater exchange") {
  auto s = helium();
  auto g = grid::build_grid(s, grid::Level::standard);
  auto d = gaussian_density(g, s.coords[0], 0.9, 1.4);
  const double slater = fn::evaluate(fn::Kind::lda_x, g, d).value;
  const double pbex = fn::evaluate(fn::Kind::pbe_x, g, d).value;
  CHECK(pbex < slater);  // both negative; enhancement deepens exchange
  CHECK(pbex > (1.0 + fn::GgaParams().pbex_kappa) * slater);
}

TEST_CASE("uniform-scaling law: kinetic functionals scale as lambda^2") {
  // rho_lambda(r) = lambda^3 rho(lambda r) is realized exactly by the
  // gaussian substitution c -> lambda^3 c, gamma -> lambda^2 gamma.
  auto s = helium();
  auto g = grid::build_grid(s, grid::Level::standard);
  const double c = 0.4, gamma = 0.8, lambda = 1.7;
  auto d1 = gaussian_density(g, s.coords[0], c, gamma);
  auto d2 = gaussian_density(g, s.coords[0], lambda * lambda * lambda * c,
                             lambda * lambda * gamma);
  for (auto kind : {fn::Kind::tf, fn::Kind::vw, fn::Kind::apbe}) {
    const double t1 = fn::evaluate(kind, g, d1).value;
    const double t2 = fn::evaluate(kind, g, d2).value;
    CAPTURE(fn::functional_name(kind));
    CHECK(t2 == doctest::Approx(lambda * lambda * t1).epsilon(1e-8));
  }
}

TEST_CASE("coefficient-space gradients match central finite differences") {
  auto s = make_structure({Vector3d(0, 0, 0), Vector3d(0, 0, 1.4)}, {1, 1});
  auto defs = read_basis_file(std::string(kDataDir) + "/basis/minimal.bas");
  auto basis = build_density_basis(s, 2.5, derive_anchors(defs), 2);
  auto g = grid::build_grid(s, grid::Level::coarse);
  auto amps = grid::amplitudes(basis, s, g);

  // strictly positive baseline: strong s-type coefficients and only mild
  // higher-l admixture, so the von Weizsacker integrand has no transverse
  // density zeros (where its coefficient gradient is genuinely singular)
  RngStream rng(2024);
  VectorXd p(basis.n_funcs());
  for (int mu = 0; mu < p.size(); ++mu)
    p[mu] = basis.funcs[mu].l == 0 ? 1.5 + 0.3 * rng.uniform()
                                   : 0.005 * rng.normal();

  auto density_of = [&](const VectorXd& q, bool with_amps) {
    grid::DensityOnGrid d;
    d.rho = amps.values * q;
    d.grad.resize(g.n_points(), 3);
    for (int dim = 0; dim < 3; ++dim) d.grad.col(dim) = amps.gradients[dim] * q;
    if (with_amps) d.amps = amps;
    return d;
  };

  const double h = 1e-4;
  for (auto kind : {fn::Kind::tf, fn::Kind::vw, fn::Kind::tf_vw19, fn::Kind::tf_vw,
                    fn::Kind::apbe, fn::Kind::lda_x, fn::Kind::pbe_x}) {
    CAPTURE(fn::functional_name(kind));
    auto base = fn::evaluate(kind, g, density_of(p, true));
    REQUIRE(base.grad_p.size() == basis.n_funcs());
    for (int trial = 0; trial < 20; ++trial) {
      VectorXd u(p.size());
      for (int mu = 0; mu < u.size(); ++mu) u[mu] = rng.normal();
      u /= u.cwiseAbs().maxCoeff();
      const double ep = fn::evaluate(kind, g, density_of(p + h * u, false)).value;
      const double em = fn::evaluate(kind, g, density_of(p - h * u, false)).value;
      const double fd = (ep - em) / (2 * h);
      const double an = base.grad_p.dot(u);
      CAPTURE(trial);
      CHECK(std::abs(fd - an) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("parameter file loading and functional name parsing") {
  auto par = fn::load_gga_params(std::string(kDataDir) + "/functionals/apbe.conf");
  CHECK(par.apbe_kappa == doctest::Approx(0.804).epsilon(1e-15));
  CHECK(par.apbe_mu == doctest::Approx(0.23889).epsilon(1e-15));
  CHECK(par.pbex_mu == doctest::Approx(0.2195149727645171).epsilon(1e-15));
  CHECK_THROWS_AS(fn::load_gga_params("/nonexistent/file.conf"), config_error);

  for (const char* name : {"tf", "vw", "tf+1/9vw", "tf+vw", "apbe", "lda-x", "pbe-x"})
    CHECK(fn::functional_name(fn::parse_functional(name)) == name);
  CHECK_THROWS_AS(fn::parse_functional("b3lyp"), config_error);
  CHECK(fn::is_kinetic(fn::Kind::apbe));
  CHECK_FALSE(fn::is_kinetic(fn::Kind::lda_x));
}
