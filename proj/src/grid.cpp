#include "ofdft/grid.hpp"

#include <cmath>
#include <vector>

#include "ofdft/integrals.hpp"

namespace ofdft {
namespace grid {
namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// Bragg-Slater covalent radii in angstrom (Slater 1964; 0.35 for H), used
// both for the Becke cell size adjustment and the radial map scale.
constexpr double kBraggAngstrom[19] = {
    0.0,                                                         // Z = 0
    0.35, 1.40,                                                  // H, He
    1.45, 1.05, 0.85, 0.70, 0.65, 0.60, 0.50, 1.50,              // Li..Ne
    1.80, 1.50, 1.25, 1.10, 1.00, 1.00, 1.00, 1.80};             // Na..Ar

double bragg_radius_bohr(int z) {
  if (z < 1 || z > 18)
    throw config_error("no Bragg-Slater radius tabulated for element Z=" +
                       std::to_string(z));
  return kBraggAngstrom[z] * kAngstromToBohr;
}

// Becke's radial scale: the Bragg radius for hydrogen, half of it otherwise.
double radial_scale(int z) {
  return z == 1 ? bragg_radius_bohr(1) : 0.5 * bragg_radius_bohr(z);
}

// Gauss-Chebyshev (second kind) nodes mapped onto (0, inf) through Becke's
// r = rm (1+x)/(1-x). Weights absorb the map Jacobian and the r^2 volume
// factor, so sum_k w_k f(r_k) ~ int_0^inf f(r) r^2 dr.
void radial_rule(int n, double rm, VectorXd& r, VectorXd& w) {
  r.resize(n);
  w.resize(n);
  for (int i = 1; i <= n; ++i) {
    const double theta = i * kPi / (n + 1);
    const double x = std::cos(theta);
    const double gc = kPi / (n + 1) * std::sin(theta);  // plain-dx weight
    const double rr = rm * (1.0 + x) / (1.0 - x);
    const double jac = 2.0 * rm / sq(1.0 - x);
    r[n - i] = rr;
    w[n - i] = gc * jac * rr * rr;
  }
}

// Becke smoothing polynomial iterated k=3 times, then mapped to the cell
// step function s ranging over [0, 1].
double cell_step(double nu) {
  double f = std::min(1.0, std::max(-1.0, nu));
  for (int k = 0; k < 3; ++k) f = 1.5 * f - 0.5 * f * f * f;
  return 0.5 * (1.0 - f);
}

struct PartitionContext {
  int n_atoms = 0;
  std::vector<Vector3d> centers;
  MatrixXd inv_dist;  // 1 / |x_i - x_j|
  MatrixXd size_adj;  // Becke's a_ij from the Bragg radius ratio
};

PartitionContext make_partition_context(const MolecularStructure& s) {
  PartitionContext ctx;
  ctx.n_atoms = s.n_atoms();
  ctx.centers = s.coords;
  ctx.inv_dist = MatrixXd::Zero(ctx.n_atoms, ctx.n_atoms);
  ctx.size_adj = MatrixXd::Zero(ctx.n_atoms, ctx.n_atoms);
  for (int i = 0; i < ctx.n_atoms; ++i)
    for (int j = 0; j < ctx.n_atoms; ++j) {
      if (i == j) continue;
      ctx.inv_dist(i, j) = 1.0 / (s.coords[i] - s.coords[j]).norm();
      const double chi =
          bragg_radius_bohr(s.atomic_numbers[i]) / bragg_radius_bohr(s.atomic_numbers[j]);
      const double u = (chi - 1.0) / (chi + 1.0);
      double a = u / (u * u - 1.0);
      a = std::min(0.5, std::max(-0.5, a));
      ctx.size_adj(i, j) = a;
    }
  return ctx;
}

VectorXd partition_at(const PartitionContext& ctx, const Vector3d& r) {
  const int n = ctx.n_atoms;
  if (n == 1) return VectorXd::Ones(1);
  std::vector<double> dist(n);
  for (int i = 0; i < n; ++i) dist[i] = (r - ctx.centers[i]).norm();
  VectorXd cell = VectorXd::Ones(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double mu = (dist[i] - dist[j]) * ctx.inv_dist(i, j);
      const double nu = mu + ctx.size_adj(i, j) * (1.0 - mu * mu);
      const double si = cell_step(nu);
      cell[i] *= si;
      cell[j] *= 1.0 - si;
    }
  const double total = std::max(cell.sum(), 1e-300);
  return cell / total;
}

}  // namespace

Level parse_level(const std::string& name) {
  if (name == "coarse") return Level::coarse;
  if (name == "standard") return Level::standard;
  if (name == "fine") return Level::fine;
  throw config_error("unknown grid level '" + name +
                     "' (expected coarse, standard, or fine)");
}

int radial_count(Level level) {
  switch (level) {
    case Level::coarse:
      return 40;
    case Level::standard:
      return 75;
    case Level::fine:
      return 120;
  }
  return 75;
}

int angular_count(Level level) {
  switch (level) {
    case Level::coarse:
      return 110;
    case Level::standard:
      return 194;
    case Level::fine:
      return 302;
  }
  return 194;
}

VectorXd becke_partition(const MolecularStructure& s, const Vector3d& r) {
  return partition_at(make_partition_context(s), r);
}

Grid build_grid(const MolecularStructure& s, Level level) {
  const int n_rad = radial_count(level);
  const int n_ang = angular_count(level);
  MatrixXd ang_pts;
  VectorXd ang_wts;
  if (!lebedev_rule(n_ang, ang_pts, ang_wts))
    throw config_error("no Lebedev rule of order " + std::to_string(n_ang));

  const PartitionContext ctx = make_partition_context(s);
  const int n_atoms = s.n_atoms();
  Grid g;
  g.points.resize(static_cast<Eigen::Index>(n_atoms) * n_rad * n_ang, 3);
  g.weights.resize(g.points.rows());

  Eigen::Index row = 0;
  VectorXd rad_r, rad_w;
  for (int a = 0; a < n_atoms; ++a) {
    radial_rule(n_rad, radial_scale(s.atomic_numbers[a]), rad_r, rad_w);
    for (int k = 0; k < n_rad; ++k) {
      const double shell_w = 4.0 * kPi * rad_w[k];
      for (int j = 0; j < n_ang; ++j, ++row) {
        const Vector3d x = s.coords[a] + rad_r[k] * ang_pts.row(j).transpose();
        g.points.row(row) = x.transpose();
        const double cell = partition_at(ctx, x)[a];
        // Far collinear points can underflow the cell weight to zero; keep
        // the stored weight strictly positive without affecting quadrature.
        g.weights[row] = std::max(shell_w * ang_wts[j] * cell, 1e-300);
      }
    }
  }
  return g;
}

AmplitudeTable amplitudes(const BasisSet& basis, const MolecularStructure& s,
                          const Grid& g) {
  const int n_pts = g.n_points();
  const int n_funcs = basis.n_funcs();
  AmplitudeTable t;
  t.values = MatrixXd::Zero(n_pts, n_funcs);
  for (auto& m : t.gradients) m = MatrixXd::Zero(n_pts, n_funcs);

  // First flat function index of every shell (functions are shell-contiguous
  // with m = -l..l).
  std::vector<int> shell_first(basis.n_shells(), -1);
  for (int mu = 0; mu < n_funcs; ++mu) {
    const int sh = basis.funcs[mu].shell;
    if (shell_first[sh] < 0) shell_first[sh] = mu;
  }

  for (int sh = 0; sh < basis.n_shells(); ++sh) {
    const Shell& shell = basis.shells[sh];
    const Vector3d& center = s.coords[shell.atom_index];
    const auto& carts = cart_list(shell.l);
    const MatrixXd& c2s = c2s_matrix(shell.l);
    const int n_cart = static_cast<int>(carts.size());
    const int mu0 = shell_first[sh];

    for (int gp = 0; gp < n_pts; ++gp) {
      const Vector3d d = g.points.row(gp).transpose() - center;
      const double r2 = d.squaredNorm();
      double rad = 0.0, drad = 0.0;  // radial part and d(rad)/d(r^2)
      for (std::size_t p = 0; p < shell.exponents.size(); ++p) {
        const double e = shell.contraction[p] * std::exp(-shell.exponents[p] * r2);
        rad += e;
        drad -= shell.exponents[p] * e;
      }
      for (int m = 0; m < 2 * shell.l + 1; ++m) {
        double poly = 0.0;
        Vector3d dpoly = Vector3d::Zero();
        for (int c = 0; c < n_cart; ++c) {
          const double coef = c2s(m, c);
          if (coef == 0.0) continue;
          const auto& e = carts[c];
          double axis_val[3], axis_der[3];
          for (int dim = 0; dim < 3; ++dim) {
            double v = 1.0;
            for (int q = 0; q < e[dim]; ++q) v *= d[dim];
            axis_val[dim] = v;
            double dv = e[dim];
            for (int q = 0; q < e[dim] - 1; ++q) dv *= d[dim];
            axis_der[dim] = e[dim] > 0 ? dv : 0.0;
          }
          poly += coef * axis_val[0] * axis_val[1] * axis_val[2];
          for (int dim = 0; dim < 3; ++dim)
            dpoly[dim] += coef * axis_der[dim] * axis_val[(dim + 1) % 3] *
                          axis_val[(dim + 2) % 3];
        }
        t.values(gp, mu0 + m) = poly * rad;
        const Vector3d full_grad = dpoly * rad + poly * 2.0 * drad * d;
        for (int dim = 0; dim < 3; ++dim)
          t.gradients[dim](gp, mu0 + m) = full_grad[dim];
      }
    }
  }
  return t;
}

DensityOnGrid eval_density(const VectorXd& p, const BasisSet& basis,
                           const MolecularStructure& s, const Grid& g) {
  if (p.size() != basis.n_funcs())
    throw contract_error("density coefficient length " + std::to_string(p.size()) +
                         " != basis size " + std::to_string(basis.n_funcs()));
  DensityOnGrid out;
  out.amps = amplitudes(basis, s, g);
  out.rho = out.amps.values * p;
  out.grad.resize(g.n_points(), 3);
  for (int dim = 0; dim < 3; ++dim) out.grad.col(dim) = out.amps.gradients[dim] * p;
  return out;
}

void density_from_matrix(const AmplitudeTable& amps, const MatrixXd& gamma,
                         VectorXd& rho, MatrixXd& grad) {
  if (gamma.rows() != amps.values.cols() || gamma.cols() != amps.values.cols())
    throw contract_error("density matrix does not match amplitude table");
  const MatrixXd half = amps.values * gamma;  // G x B
  rho = (half.array() * amps.values.array()).rowwise().sum();
  grad.resize(amps.values.rows(), 3);
  for (int dim = 0; dim < 3; ++dim)
    grad.col(dim) = 2.0 * (half.array() * amps.gradients[dim].array()).rowwise().sum();
}

}  // namespace grid
}  // namespace ofdft
