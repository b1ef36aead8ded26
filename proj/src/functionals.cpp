#include "ofdft/functionals.hpp"

#include <cmath>
#include <map>
#include <sstream>

namespace ofdft {
namespace functionals {
namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kRhoFloor = 1e-12;

double tf_prefactor() { return 0.3 * std::pow(3.0 * kPi * kPi, 2.0 / 3.0); }
double slater_prefactor() { return 0.75 * std::pow(3.0 / kPi, 1.0 / 3.0); }
// reduced-gradient scale: s^2 = sigma / (4 (3 pi^2)^{2/3} rho^{8/3})
double s2_scale() { return 0.25 * std::pow(3.0 * kPi * kPi, -2.0 / 3.0); }

struct PointTerms {
  double f = 0.0, f_rho = 0.0, f_sigma = 0.0;
};

void add_tf(PointTerms& t, double rho, double scale) {
  const double c = scale * tf_prefactor();
  t.f += c * std::pow(rho, 5.0 / 3.0);
  t.f_rho += c * (5.0 / 3.0) * std::pow(rho, 2.0 / 3.0);
}

void add_vw(PointTerms& t, double rho, double sigma, double scale) {
  const double inv = scale / (8.0 * rho);
  t.f += sigma * inv;
  t.f_rho -= sigma * inv / rho;
  t.f_sigma += inv;
}

// f = K rho^e F(p), p = A sigma rho^{-8/3},
// F(p) = 1 + kappa - kappa / (1 + mu p / kappa)
void add_pbe_family(PointTerms& t, double rho, double sigma, double K, double e,
                    double kappa, double mu) {
  const double A = s2_scale();
  const double p = A * sigma * std::pow(rho, -8.0 / 3.0);
  const double denom = 1.0 + mu * p / kappa;
  const double F = 1.0 + kappa - kappa / denom;
  const double dF = mu / (denom * denom);
  const double re = std::pow(rho, e);
  t.f += K * re * F;
  t.f_rho += K * (re / rho) * (e * F - (8.0 / 3.0) * p * dF);
  t.f_sigma += K * re * dF * A * std::pow(rho, -8.0 / 3.0);
}

void point_kernel(Kind kind, const GgaParams& par, double rho, double sigma,
                  PointTerms& t) {
  switch (kind) {
    case Kind::tf:
      add_tf(t, rho, 1.0);
      break;
    case Kind::vw:
      add_vw(t, rho, sigma, 1.0);
      break;
    case Kind::tf_vw19:
      add_tf(t, rho, 1.0);
      add_vw(t, rho, sigma, 1.0 / 9.0);
      break;
    case Kind::tf_vw:
      add_tf(t, rho, 1.0);
      add_vw(t, rho, sigma, 1.0);
      break;
    case Kind::apbe:
      add_pbe_family(t, rho, sigma, tf_prefactor(), 5.0 / 3.0, par.apbe_kappa,
                     par.apbe_mu);
      break;
    case Kind::lda_x:
      t.f -= slater_prefactor() * std::pow(rho, 4.0 / 3.0);
      t.f_rho -= slater_prefactor() * (4.0 / 3.0) * std::pow(rho, 1.0 / 3.0);
      break;
    case Kind::pbe_x:
      add_pbe_family(t, rho, sigma, -slater_prefactor(), 4.0 / 3.0,
                     par.pbex_kappa, par.pbex_mu);
      break;
  }
}

}  // namespace

GgaParams load_gga_params(const std::string& path) {
  GgaParams par;
  std::istringstream in(read_text_file(path));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key, eq;
    double value;
    if (!(ls >> key)) continue;  // blank
    if (!(ls >> eq >> value) || eq != "=")
      throw config_error(path + ":" + std::to_string(lineno) +
                         ": expected 'key = value'");
    if (key == "apbe.kappa")
      par.apbe_kappa = value;
    else if (key == "apbe.mu")
      par.apbe_mu = value;
    else if (key == "pbex.kappa")
      par.pbex_kappa = value;
    else if (key == "pbex.mu")
      par.pbex_mu = value;
    else
      throw config_error(path + ":" + std::to_string(lineno) + ": unknown key '" +
                         key + "'");
  }
  return par;
}

Kind parse_functional(const std::string& name) {
  static const std::map<std::string, Kind> names = {
      {"tf", Kind::tf},           {"vw", Kind::vw},
      {"tf+1/9vw", Kind::tf_vw19}, {"tf+vw", Kind::tf_vw},
      {"apbe", Kind::apbe},       {"lda-x", Kind::lda_x},
      {"pbe-x", Kind::pbe_x}};
  const auto it = names.find(name);
  if (it == names.end())
    throw config_error("unknown functional '" + name +
                       "' (expected tf, vw, tf+1/9vw, tf+vw, apbe, lda-x, pbe-x)");
  return it->second;
}

const std::string& functional_name(Kind kind) {
  static const std::string names[] = {"tf",   "vw",    "tf+1/9vw", "tf+vw",
                                      "apbe", "lda-x", "pbe-x"};
  return names[static_cast<int>(kind)];
}

bool is_kinetic(Kind kind) {
  return kind != Kind::lda_x && kind != Kind::pbe_x;
}

void kernel(Kind kind, const GgaParams& params, const VectorXd& rho,
            const VectorXd& sigma, VectorXd& f, VectorXd& f_rho,
            VectorXd& f_sigma) {
  if (rho.size() != sigma.size())
    throw contract_error("kernel: rho and sigma lengths differ");
  const Eigen::Index n = rho.size();
  f.setZero(n);
  f_rho.setZero(n);
  f_sigma.setZero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (rho[i] <= kRhoFloor) continue;
    PointTerms t;
    point_kernel(kind, params, rho[i], sigma[i], t);
    f[i] = t.f;
    f_rho[i] = t.f_rho;
    f_sigma[i] = t.f_sigma;
  }
}

FunctionalResult evaluate(Kind kind, const grid::Grid& g,
                          const grid::DensityOnGrid& d, const GgaParams& params) {
  if (d.rho.size() != g.n_points() || d.grad.rows() != g.n_points())
    throw contract_error("evaluate: density does not match grid size");
  const VectorXd sigma = d.grad.rowwise().squaredNorm();
  VectorXd f, f_rho, f_sigma;
  kernel(kind, params, d.rho, sigma, f, f_rho, f_sigma);

  FunctionalResult out;
  out.value = g.weights.dot(f);
  const auto& amps = d.amps;
  if (amps.values.rows() == g.n_points() && amps.values.cols() > 0) {
    out.grad_p = amps.values.transpose() * (g.weights.array() * f_rho.array()).matrix();
    for (int dim = 0; dim < 3; ++dim) {
      const VectorXd b =
          (g.weights.array() * 2.0 * f_sigma.array() * d.grad.col(dim).array()).matrix();
      out.grad_p += amps.gradients[dim].transpose() * b;
    }
  }
  return out;
}

}  // namespace functionals
}  // namespace ofdft
