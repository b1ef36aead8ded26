#include "ofdft/integrals.hpp"

#include <cmath>
#include <cstring>

namespace ofdft {

const std::vector<std::array<int, 3>>& cart_list(int l) {
  static const std::vector<std::array<int, 3>> l0 = {{0, 0, 0}};
  static const std::vector<std::array<int, 3>> l1 = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  static const std::vector<std::array<int, 3>> l2 = {{2, 0, 0}, {1, 1, 0}, {1, 0, 1},
                                                     {0, 2, 0}, {0, 1, 1}, {0, 0, 2}};
  switch (l) {
    case 0: return l0;
    case 1: return l1;
    case 2: return l2;
    default: throw contract_error("cart_list: l > 2 unsupported");
  }
}

const MatrixXd& c2s_matrix(int l) {
  static const MatrixXd m0 = [] {
    MatrixXd m(1, 1);
    m << 1.0;
    return m;
  }();
  static const MatrixXd m1 = [] {
    MatrixXd m = MatrixXd::Zero(3, 3);  // rows m=-1,0,+1 -> y,z,x
    m(0, 1) = 1.0;
    m(1, 2) = 1.0;
    m(2, 0) = 1.0;
    return m;
  }();
  static const MatrixXd m2 = [] {
    const double s3 = std::sqrt(3.0);
    MatrixXd m = MatrixXd::Zero(5, 6);  // cart: xx,xy,xz,yy,yz,zz
    m(0, 1) = s3;                       // m=-2: sqrt3 xy
    m(1, 4) = s3;                       // m=-1: sqrt3 yz
    m(2, 0) = -0.5;                     // m= 0: zz - xx/2 - yy/2
    m(2, 3) = -0.5;
    m(2, 5) = 1.0;
    m(3, 2) = s3;                       // m=+1: sqrt3 xz
    m(4, 0) = 0.5 * s3;                 // m=+2: (sqrt3/2)(xx - yy)
    m(4, 3) = -0.5 * s3;
    return m;
  }();
  switch (l) {
    case 0: return m0;
    case 1: return m1;
    case 2: return m2;
    default: throw contract_error("c2s_matrix: l > 2 unsupported");
  }
}

void boys(int mmax, double T, double* F) {
  if (T < 1e-12) {
    for (int m = 0; m <= mmax; ++m) F[m] = 1.0 / (2.0 * m + 1.0);
    return;
  }
  if (T <= 30.0) {
    // series at m = mmax, then downward recursion (both numerically benign)
    double term = 1.0 / (2.0 * mmax + 1.0);
    double sum = term;
    for (int k = 1; k < 1000; ++k) {
      term *= 2.0 * T / (2.0 * mmax + 2.0 * k + 1.0);
      sum += term;
      if (term < sum * 1e-17) break;
    }
    const double expmt = std::exp(-T);
    F[mmax] = expmt * sum;
    for (int m = mmax; m > 0; --m) F[m - 1] = (2.0 * T * F[m] + expmt) / (2.0 * m - 1.0);
    return;
  }
  const double expmt = std::exp(-T);
  F[0] = 0.5 * std::sqrt(M_PI / T);
  for (int m = 0; m < mmax; ++m) F[m + 1] = ((2.0 * m + 1.0) * F[m] - expmt) / (2.0 * T);
}

namespace {

constexpr int kMaxI = 5;  // angular index bound per function (l<=2, +2 for kinetic)
constexpr int kMaxT = 9;

// Hermite expansion coefficients E[i][j][t] for one Cartesian direction.
struct ETab {
  double v[kMaxI][kMaxI][kMaxT];
  double at(int i, int j, int t) const {
    if (t < 0 || t > i + j) return 0.0;
    return v[i][j][t];
  }
};

void compute_e(int imax, int jmax, double p, double pa, double pb, double kab, ETab& e) {
  std::memset(e.v, 0, sizeof(e.v));
  e.v[0][0][0] = kab;
  const double inv2p = 0.5 / p;
  for (int i = 0; i < imax; ++i)
    for (int t = 0; t <= i + 1; ++t)
      e.v[i + 1][0][t] = inv2p * e.at(i, 0, t - 1) + pa * e.at(i, 0, t) +
                         (t + 1) * e.at(i, 0, t + 1);
  for (int j = 0; j < jmax; ++j)
    for (int i = 0; i <= imax; ++i)
      for (int t = 0; t <= i + j + 1; ++t)
        e.v[i][j + 1][t] = inv2p * e.at(i, j, t - 1) + pb * e.at(i, j, t) +
                           (t + 1) * e.at(i, j, t + 1);
}

constexpr int kMaxL = 7;  // max total Hermite order (ERI d-capable + field)

// Hermite Coulomb integrals R_{t,u,v} = R^0_{t,u,v}(alpha, PQ).
struct RTab {
  double v[kMaxL + 1][kMaxL + 1][kMaxL + 1];
  double at(int t, int u, int w) const { return v[t][u][w]; }
};

void hermite_coulomb(int ltot, double alpha, const Vector3d& pq, RTab& r) {
  if (ltot > kMaxL) throw contract_error("hermite_coulomb: order too large");
  const double t_arg = alpha * pq.squaredNorm();
  double f[kMaxL + 1];
  boys(ltot, t_arg, f);
  // aux[n][t][u][v]
  static thread_local double aux[kMaxL + 1][kMaxL + 1][kMaxL + 1][kMaxL + 1];
  for (int n = ltot; n >= 0; --n) {
    double pref = std::pow(-2.0 * alpha, n);
    aux[n][0][0][0] = pref * f[n];
    const int rem = ltot - n;
    for (int tt = 0; tt <= rem; ++tt)
      for (int uu = 0; uu + tt <= rem; ++uu)
        for (int vv = 0; vv + uu + tt <= rem; ++vv) {
          if (tt + uu + vv == 0) continue;
          double val = 0.0;
          if (tt > 0) {
            val = pq(0) * aux[n + 1][tt - 1][uu][vv];
            if (tt > 1) val += (tt - 1) * aux[n + 1][tt - 2][uu][vv];
          } else if (uu > 0) {
            val = pq(1) * aux[n + 1][tt][uu - 1][vv];
            if (uu > 1) val += (uu - 1) * aux[n + 1][tt][uu - 2][vv];
          } else {
            val = pq(2) * aux[n + 1][tt][uu][vv - 1];
            if (vv > 1) val += (vv - 1) * aux[n + 1][tt][uu][vv - 2];
          }
          aux[n][tt][uu][vv] = val;
        }
  }
  for (int tt = 0; tt <= ltot; ++tt)
    for (int uu = 0; uu + tt <= ltot; ++uu)
      for (int vv = 0; vv + uu + tt <= ltot; ++vv) r.v[tt][uu][vv] = aux[0][tt][uu][vv];
}

// Hermite expansion of one contracted-shell pair about its product centers.
struct PrimPair {
  double p = 0.0;     // a + b
  double coef = 0.0;  // c_i * c_j
  Vector3d P;
  ETab ex, ey, ez;
};

// jext extends the ket angular range (kinetic needs +2).
std::vector<PrimPair> make_pairs(const Shell& sa, const Vector3d& A, const Shell& sb,
                                 const Vector3d& B, int jext = 0) {
  std::vector<PrimPair> pairs;
  const Vector3d AB = A - B;
  for (std::size_t i = 0; i < sa.exponents.size(); ++i)
    for (std::size_t j = 0; j < sb.exponents.size(); ++j) {
      const double a = sa.exponents[i], b = sb.exponents[j];
      PrimPair pp;
      pp.p = a + b;
      pp.coef = sa.contraction[i] * sb.contraction[j];
      pp.P = (a * A + b * B) / pp.p;
      const double mu = a * b / pp.p;
      const Vector3d PA = pp.P - A, PB = pp.P - B;
      compute_e(sa.l, sb.l + jext, pp.p, PA(0), PB(0), std::exp(-mu * AB(0) * AB(0)), pp.ex);
      compute_e(sa.l, sb.l + jext, pp.p, PA(1), PB(1), std::exp(-mu * AB(1) * AB(1)), pp.ey);
      compute_e(sa.l, sb.l + jext, pp.p, PA(2), PB(2), std::exp(-mu * AB(2) * AB(2)), pp.ez);
      pairs.push_back(pp);
    }
  return pairs;
}

// A dummy zero-exponent s partner turns a single shell into a "pair" whose
// Hermite expansion is the shell itself.
Shell dummy_s_shell() {
  Shell sh;
  sh.l = 0;
  sh.exponents = {0.0};
  sh.contraction = {1.0};
  return sh;
}

std::vector<PrimPair> make_single(const Shell& sa, const Vector3d& A) {
  std::vector<PrimPair> pairs;
  for (std::size_t i = 0; i < sa.exponents.size(); ++i) {
    const double a = sa.exponents[i];
    PrimPair pp;
    pp.p = a;
    pp.coef = sa.contraction[i];
    pp.P = A;
    compute_e(sa.l, 0, pp.p, 0.0, 0.0, 1.0, pp.ex);
    compute_e(sa.l, 0, pp.p, 0.0, 0.0, 1.0, pp.ey);
    compute_e(sa.l, 0, pp.p, 0.0, 0.0, 1.0, pp.ez);
    pairs.push_back(pp);
  }
  return pairs;
}

using CartBlock = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;

MatrixXd sph_transform(int la, int lb, const CartBlock& cart) {
  return c2s_matrix(la) * cart * c2s_matrix(lb).transpose();
}

// scatter a (2la+1) x (2lb+1) block into the full matrix
void scatter(MatrixXd& out, int row0, int col0, const MatrixXd& block) {
  out.block(row0, col0, block.rows(), block.cols()) = block;
}

std::vector<int> shell_offsets(const BasisSet& b) {
  std::vector<int> off(b.n_shells(), -1);
  for (int mu = b.n_funcs() - 1; mu >= 0; --mu) off[b.funcs[mu].shell] = mu;
  return off;
}

}  // namespace

std::size_t PackedEri::index(int i, int j, int k, int l) const {
  auto pair = [](int a, int b) {
    if (a < b) std::swap(a, b);
    return static_cast<std::size_t>(a) * (a + 1) / 2 + b;
  };
  std::size_t ij = pair(i, j), kl = pair(k, l);
  if (ij < kl) std::swap(ij, kl);
  return ij * (ij + 1) / 2 + kl;
}

MatrixXd PackedEri::contract(const MatrixXd& gamma) const {
  MatrixXd j = MatrixXd::Zero(nbf_, nbf_);
  for (int a = 0; a < nbf_; ++a)
    for (int b = 0; b <= a; ++b) {
      double sum = 0.0;
      for (int c = 0; c < nbf_; ++c)
        for (int d = 0; d < nbf_; ++d) sum += at(a, b, c, d) * gamma(c, d);
      j(a, b) = sum;
      j(b, a) = sum;
    }
  return j;
}

namespace integrals {

MatrixXd overlap(const BasisSet& basis_a, const BasisSet& basis_b,
                 const MolecularStructure& s) {
  MatrixXd out = MatrixXd::Zero(basis_a.n_funcs(), basis_b.n_funcs());
  const auto offa = shell_offsets(basis_a), offb = shell_offsets(basis_b);
  const bool same = &basis_a == &basis_b;
  for (int ia = 0; ia < basis_a.n_shells(); ++ia) {
    const Shell& sa = basis_a.shells[ia];
    const Vector3d& A = s.coords[sa.atom_index];
    for (int ib = same ? ia : 0; ib < basis_b.n_shells(); ++ib) {
      const Shell& sb = basis_b.shells[ib];
      const Vector3d& B = s.coords[sb.atom_index];
      const auto& ca = cart_list(sa.l);
      const auto& cb = cart_list(sb.l);
      CartBlock cart = CartBlock::Zero(ca.size(), cb.size());
      for (const PrimPair& pp : make_pairs(sa, A, sb, B)) {
        const double pref = pp.coef * std::pow(M_PI / pp.p, 1.5);
        for (std::size_t x = 0; x < ca.size(); ++x)
          for (std::size_t y = 0; y < cb.size(); ++y)
            cart(x, y) += pref * pp.ex.at(ca[x][0], cb[y][0], 0) *
                          pp.ey.at(ca[x][1], cb[y][1], 0) * pp.ez.at(ca[x][2], cb[y][2], 0);
      }
      MatrixXd blk = sph_transform(sa.l, sb.l, cart);
      scatter(out, offa[ia], offb[ib], blk);
      if (same && ib != ia) scatter(out, offa[ib], offb[ia], blk.transpose().eval());
    }
  }
  return out;
}

MatrixXd kinetic(const BasisSet& basis, const MolecularStructure& s) {
  MatrixXd out = MatrixXd::Zero(basis.n_funcs(), basis.n_funcs());
  const auto off = shell_offsets(basis);
  for (int ia = 0; ia < basis.n_shells(); ++ia) {
    const Shell& sa = basis.shells[ia];
    const Vector3d& A = s.coords[sa.atom_index];
    for (int ib = ia; ib < basis.n_shells(); ++ib) {
      const Shell& sb = basis.shells[ib];
      const Vector3d& B = s.coords[sb.atom_index];
      const auto& ca = cart_list(sa.l);
      const auto& cb = cart_list(sb.l);
      CartBlock cart = CartBlock::Zero(ca.size(), cb.size());
      std::size_t prim_index = 0;
      std::vector<double> bexps;
      for (std::size_t i = 0; i < sa.exponents.size(); ++i)
        for (std::size_t j = 0; j < sb.exponents.size(); ++j)
          bexps.push_back(sb.exponents[j]);
      for (const PrimPair& pp : make_pairs(sa, A, sb, B, /*jext=*/2)) {
        const double b = bexps[prim_index++];
        const double pref = pp.coef * std::pow(M_PI / pp.p, 1.5);
        auto s1 = [&](const ETab& e, int i, int j) { return e.at(i, j, 0); };
        auto k1 = [&](const ETab& e, int i, int j) {
          double v = -2.0 * b * b * e.at(i, j + 2, 0) + b * (2.0 * j + 1.0) * e.at(i, j, 0);
          if (j >= 2) v -= 0.5 * j * (j - 1.0) * e.at(i, j - 2, 0);
          return v;
        };
        for (std::size_t x = 0; x < ca.size(); ++x)
          for (std::size_t y = 0; y < cb.size(); ++y) {
            const int ax = ca[x][0], ay = ca[x][1], az = ca[x][2];
            const int bx = cb[y][0], by = cb[y][1], bz = cb[y][2];
            double v = k1(pp.ex, ax, bx) * s1(pp.ey, ay, by) * s1(pp.ez, az, bz) +
                       s1(pp.ex, ax, bx) * k1(pp.ey, ay, by) * s1(pp.ez, az, bz) +
                       s1(pp.ex, ax, bx) * s1(pp.ey, ay, by) * k1(pp.ez, az, bz);
            cart(x, y) += pref * v;
          }
      }
      MatrixXd blk = sph_transform(sa.l, sb.l, cart);
      scatter(out, off[ia], off[ib], blk);
      if (ib != ia) scatter(out, off[ib], off[ia], blk.transpose().eval());
    }
  }
  return out;
}

namespace {

// -sum_C Z_C (2 pi / p) sum_tuv E R_tuv for one shell pair block
CartBlock nuclear_cart_block(const Shell& sa, const Vector3d& A, const Shell& sb,
                             const Vector3d& B, const MolecularStructure& s) {
  const auto& ca = cart_list(sa.l);
  const auto& cb = cart_list(sb.l);
  CartBlock cart = CartBlock::Zero(ca.size(), cb.size());
  const int ltot = sa.l + sb.l;
  for (const PrimPair& pp : make_pairs(sa, A, sb, B)) {
    const double pref = pp.coef * 2.0 * M_PI / pp.p;
    for (int c = 0; c < s.n_atoms(); ++c) {
      RTab r;
      hermite_coulomb(ltot, pp.p, pp.P - s.coords[c], r);
      const double zc = s.atomic_numbers[c];
      for (std::size_t x = 0; x < ca.size(); ++x)
        for (std::size_t y = 0; y < cb.size(); ++y) {
          double v = 0.0;
          for (int t = 0; t <= ca[x][0] + cb[y][0]; ++t)
            for (int u = 0; u <= ca[x][1] + cb[y][1]; ++u)
              for (int w = 0; w <= ca[x][2] + cb[y][2]; ++w)
                v += pp.ex.at(ca[x][0], cb[y][0], t) * pp.ey.at(ca[x][1], cb[y][1], u) *
                     pp.ez.at(ca[x][2], cb[y][2], w) * r.at(t, u, w);
          cart(x, y) -= pref * zc * v;
        }
    }
  }
  return cart;
}

}  // namespace

MatrixXd nuclear_attraction_matrix(const BasisSet& basis, const MolecularStructure& s) {
  if (s.n_atoms() == 0) throw contract_error("nuclear attraction: empty structure");
  MatrixXd out = MatrixXd::Zero(basis.n_funcs(), basis.n_funcs());
  const auto off = shell_offsets(basis);
  for (int ia = 0; ia < basis.n_shells(); ++ia) {
    const Shell& sa = basis.shells[ia];
    for (int ib = ia; ib < basis.n_shells(); ++ib) {
      const Shell& sb = basis.shells[ib];
      CartBlock cart = nuclear_cart_block(sa, s.coords[sa.atom_index], sb,
                                          s.coords[sb.atom_index], s);
      MatrixXd blk = sph_transform(sa.l, sb.l, cart);
      scatter(out, off[ia], off[ib], blk);
      if (ib != ia) scatter(out, off[ib], off[ia], blk.transpose().eval());
    }
  }
  return out;
}

VectorXd nuclear_attraction_vector(const BasisSet& density_basis,
                                   const MolecularStructure& s) {
  VectorXd out = VectorXd::Zero(density_basis.n_funcs());
  const auto off = shell_offsets(density_basis);
  for (int ia = 0; ia < density_basis.n_shells(); ++ia) {
    const Shell& sa = density_basis.shells[ia];
    const Vector3d& A = s.coords[sa.atom_index];
    const auto& ca = cart_list(sa.l);
    Eigen::VectorXd cart = Eigen::VectorXd::Zero(ca.size());
    for (const PrimPair& pp : make_single(sa, A)) {
      const double pref = pp.coef * 2.0 * M_PI / pp.p;
      for (int c = 0; c < s.n_atoms(); ++c) {
        RTab r;
        hermite_coulomb(sa.l, pp.p, pp.P - s.coords[c], r);
        const double zc = s.atomic_numbers[c];
        for (std::size_t x = 0; x < ca.size(); ++x) {
          double v = 0.0;
          for (int t = 0; t <= ca[x][0]; ++t)
            for (int u = 0; u <= ca[x][1]; ++u)
              for (int w = 0; w <= ca[x][2]; ++w)
                v += pp.ex.at(ca[x][0], 0, t) * pp.ey.at(ca[x][1], 0, u) *
                     pp.ez.at(ca[x][2], 0, w) * r.at(t, u, w);
          cart(x) -= pref * zc * v;
        }
      }
    }
    out.segment(off[ia], 2 * sa.l + 1) = c2s_matrix(sa.l) * cart;
  }
  return out;
}

namespace {

// general (bra-pair | ket-pair) Coulomb over Hermite expansions
double hermite_2e(const PrimPair& a, int ax, int ay, int az, int bx, int by, int bz,
                  const PrimPair& b, int cx, int cy, int cz, int dx, int dy, int dz,
                  const RTab& r) {
  double total = 0.0;
  for (int t = 0; t <= ax + bx; ++t) {
    const double ext = a.ex.at(ax, bx, t);
    if (ext == 0.0) continue;
    for (int u = 0; u <= ay + by; ++u) {
      const double eyu = a.ey.at(ay, by, u);
      if (eyu == 0.0) continue;
      for (int v = 0; v <= az + bz; ++v) {
        const double ezv = a.ez.at(az, bz, v);
        if (ezv == 0.0) continue;
        double inner = 0.0;
        for (int tt = 0; tt <= cx + dx; ++tt) {
          const double e2 = b.ex.at(cx, dx, tt);
          if (e2 == 0.0) continue;
          for (int uu = 0; uu <= cy + dy; ++uu) {
            const double e3 = b.ey.at(cy, dy, uu);
            if (e3 == 0.0) continue;
            for (int vv = 0; vv <= cz + dz; ++vv) {
              const double e4 = b.ez.at(cz, dz, vv);
              if (e4 == 0.0) continue;
              const double sign = ((tt + uu + vv) % 2 == 0) ? 1.0 : -1.0;
              inner += sign * e2 * e3 * e4 * r.at(t + tt, u + uu, v + vv);
            }
          }
        }
        total += ext * eyu * ezv * inner;
      }
    }
  }
  return total;
}

}  // namespace

MatrixXd coulomb_2c2e(const BasisSet& density_basis, const MolecularStructure& s) {
  const int m = density_basis.n_funcs();
  MatrixXd out = MatrixXd::Zero(m, m);
  const auto off = shell_offsets(density_basis);
  for (int ia = 0; ia < density_basis.n_shells(); ++ia) {
    const Shell& sa = density_basis.shells[ia];
    const auto bra = make_single(sa, s.coords[sa.atom_index]);
    for (int ib = ia; ib < density_basis.n_shells(); ++ib) {
      const Shell& sb = density_basis.shells[ib];
      const auto ket = make_single(sb, s.coords[sb.atom_index]);
      const auto& ca = cart_list(sa.l);
      const auto& cb = cart_list(sb.l);
      CartBlock cart = CartBlock::Zero(ca.size(), cb.size());
      for (const PrimPair& pa : bra)
        for (const PrimPair& pb : ket) {
          const double alpha = pa.p * pb.p / (pa.p + pb.p);
          const double pref = pa.coef * pb.coef * 2.0 * std::pow(M_PI, 2.5) /
                              (pa.p * pb.p * std::sqrt(pa.p + pb.p));
          RTab r;
          hermite_coulomb(sa.l + sb.l, alpha, pa.P - pb.P, r);
          for (std::size_t x = 0; x < ca.size(); ++x)
            for (std::size_t y = 0; y < cb.size(); ++y)
              cart(x, y) += pref * hermite_2e(pa, ca[x][0], ca[x][1], ca[x][2], 0, 0, 0,
                                             pb, cb[y][0], cb[y][1], cb[y][2], 0, 0, 0, r);
        }
      MatrixXd blk = sph_transform(sa.l, sb.l, cart);
      scatter(out, off[ia], off[ib], blk);
      if (ib != ia) scatter(out, off[ib], off[ia], blk.transpose().eval());
    }
  }
  return out;
}

std::vector<MatrixXd> coulomb_3c2e(const BasisSet& density_basis,
                                   const BasisSet& orbital_basis,
                                   const MolecularStructure& s) {
  const int m = density_basis.n_funcs();
  const int nb = orbital_basis.n_funcs();
  std::vector<MatrixXd> out(m, MatrixXd::Zero(nb, nb));
  const auto doff = shell_offsets(density_basis);
  const auto ooff = shell_offsets(orbital_basis);
  for (int id = 0; id < density_basis.n_shells(); ++id) {
    const Shell& sd = density_basis.shells[id];
    const auto bra = make_single(sd, s.coords[sd.atom_index]);
    const auto& cd = cart_list(sd.l);
    for (int ia = 0; ia < orbital_basis.n_shells(); ++ia) {
      const Shell& sa = orbital_basis.shells[ia];
      for (int ib = ia; ib < orbital_basis.n_shells(); ++ib) {
        const Shell& sb = orbital_basis.shells[ib];
        const auto ket = make_pairs(sa, s.coords[sa.atom_index], sb, s.coords[sb.atom_index]);
        const auto& ca = cart_list(sa.l);
        const auto& cb = cart_list(sb.l);
        // cart tensor: (dens cart) x (a cart * b cart)
        CartBlock cart = CartBlock::Zero(cd.size(), ca.size() * cb.size());
        for (const PrimPair& pd : bra)
          for (const PrimPair& pk : ket) {
            const double alpha = pd.p * pk.p / (pd.p + pk.p);
            const double pref = pd.coef * pk.coef * 2.0 * std::pow(M_PI, 2.5) /
                                (pd.p * pk.p * std::sqrt(pd.p + pk.p));
            RTab r;
            hermite_coulomb(sd.l + sa.l + sb.l, alpha, pd.P - pk.P, r);
            for (std::size_t xd = 0; xd < cd.size(); ++xd)
              for (std::size_t xa = 0; xa < ca.size(); ++xa)
                for (std::size_t xb = 0; xb < cb.size(); ++xb)
                  cart(xd, xa * cb.size() + xb) +=
                      pref * hermite_2e(pd, cd[xd][0], cd[xd][1], cd[xd][2], 0, 0, 0, pk,
                                        ca[xa][0], ca[xa][1], ca[xa][2], cb[xb][0],
                                        cb[xb][1], cb[xb][2], r);
          }
        // transform: density side and both orbital sides
        const MatrixXd& td = c2s_matrix(sd.l);
        const MatrixXd& ta = c2s_matrix(sa.l);
        const MatrixXd& tb = c2s_matrix(sb.l);
        for (int md = 0; md < td.rows(); ++md) {
          MatrixXd ab = MatrixXd::Zero(ca.size(), cb.size());
          for (std::size_t xa = 0; xa < ca.size(); ++xa)
            for (std::size_t xb = 0; xb < cb.size(); ++xb) {
              double v = 0.0;
              for (std::size_t xd = 0; xd < cd.size(); ++xd)
                v += td(md, xd) * cart(xd, xa * cb.size() + xb);
              ab(xa, xb) = v;
            }
          MatrixXd blk = ta * ab * tb.transpose();
          MatrixXd& dst = out[doff[id] + md];
          dst.block(ooff[ia], ooff[ib], blk.rows(), blk.cols()) = blk;
          if (ib != ia)
            dst.block(ooff[ib], ooff[ia], blk.cols(), blk.rows()) = blk.transpose();
        }
      }
    }
  }
  return out;
}

PackedEri eri_4c2e(const BasisSet& orbital_basis, const MolecularStructure& s,
                   int cap_nbf) {
  const int nb = orbital_basis.n_funcs();
  if (nb > cap_nbf) {
    const std::size_t np = PackedEri::pair_count(nb);
    throw config_error("eri_4c2e: basis size " + std::to_string(nb) + " exceeds cap " +
                       std::to_string(cap_nbf) + "; packed tensor would need " +
                       std::to_string(np * (np + 1) / 2 * 8) + " bytes");
  }
  PackedEri eri(nb);
  const auto off = shell_offsets(orbital_basis);
  const int ns = orbital_basis.n_shells();
  for (int ia = 0; ia < ns; ++ia) {
    const Shell& sa = orbital_basis.shells[ia];
    for (int ib = 0; ib <= ia; ++ib) {
      const Shell& sb = orbital_basis.shells[ib];
      const auto bra = make_pairs(sa, s.coords[sa.atom_index], sb, s.coords[sb.atom_index]);
      for (int ic = 0; ic <= ia; ++ic) {
        const Shell& sc = orbital_basis.shells[ic];
        for (int id = 0; id <= (ic == ia ? ib : ic); ++id) {
          const Shell& sd = orbital_basis.shells[id];
          const auto ket = make_pairs(sc, s.coords[sc.atom_index], sd,
                                      s.coords[sd.atom_index]);
          const auto& ca = cart_list(sa.l);
          const auto& cb = cart_list(sb.l);
          const auto& cc = cart_list(sc.l);
          const auto& cd = cart_list(sd.l);
          std::vector<double> cart(ca.size() * cb.size() * cc.size() * cd.size(), 0.0);
          for (const PrimPair& pb : bra)
            for (const PrimPair& pk : ket) {
              const double alpha = pb.p * pk.p / (pb.p + pk.p);
              const double pref = pb.coef * pk.coef * 2.0 * std::pow(M_PI, 2.5) /
                                  (pb.p * pk.p * std::sqrt(pb.p + pk.p));
              RTab r;
              hermite_coulomb(sa.l + sb.l + sc.l + sd.l, alpha, pb.P - pk.P, r);
              std::size_t idx = 0;
              for (std::size_t xa = 0; xa < ca.size(); ++xa)
                for (std::size_t xb = 0; xb < cb.size(); ++xb)
                  for (std::size_t xc = 0; xc < cc.size(); ++xc)
                    for (std::size_t xd = 0; xd < cd.size(); ++xd)
                      cart[idx++] +=
                          pref * hermite_2e(pb, ca[xa][0], ca[xa][1], ca[xa][2],
                                            cb[xb][0], cb[xb][1], cb[xb][2], pk,
                                            cc[xc][0], cc[xc][1], cc[xc][2], cd[xd][0],
                                            cd[xd][1], cd[xd][2], r);
            }
          // spherical transform all four indices
          const MatrixXd& ta = c2s_matrix(sa.l);
          const MatrixXd& tb = c2s_matrix(sb.l);
          const MatrixXd& tc = c2s_matrix(sc.l);
          const MatrixXd& td = c2s_matrix(sd.l);
          const int na = ta.rows(), nbb = tb.rows(), nc = tc.rows(), nd = td.rows();
          for (int ma = 0; ma < na; ++ma)
            for (int mb = 0; mb < nbb; ++mb)
              for (int mc = 0; mc < nc; ++mc)
                for (int md = 0; md < nd; ++md) {
                  double v = 0.0;
                  std::size_t idx = 0;
                  for (std::size_t xa = 0; xa < ca.size(); ++xa)
                    for (std::size_t xb = 0; xb < cb.size(); ++xb)
                      for (std::size_t xc = 0; xc < cc.size(); ++xc)
                        for (std::size_t xd = 0; xd < cd.size(); ++xd) {
                          const double c = ta(ma, xa) * tb(mb, xb) * tc(mc, xc) * td(md, xd);
                          if (c != 0.0) v += c * cart[idx];
                          ++idx;
                        }
                  eri.at(off[ia] + ma, off[ib] + mb, off[ic] + mc, off[id] + md) = v;
                }
        }
      }
    }
  }
  return eri;
}

VectorXd normalization_vector(const BasisSet& density_basis) {
  VectorXd w = VectorXd::Zero(density_basis.n_funcs());
  const auto off = shell_offsets(density_basis);
  for (int is = 0; is < density_basis.n_shells(); ++is) {
    const Shell& sh = density_basis.shells[is];
    const auto& carts = cart_list(sh.l);
    Eigen::VectorXd cart = Eigen::VectorXd::Zero(carts.size());
    for (std::size_t i = 0; i < sh.exponents.size(); ++i) {
      const double a = sh.exponents[i];
      for (std::size_t x = 0; x < carts.size(); ++x) {
        const int lx = carts[x][0], ly = carts[x][1], lz = carts[x][2];
        if (lx % 2 || ly % 2 || lz % 2) continue;
        auto g1 = [&](int n) {
          // int x^n exp(-a x^2) dx for even n (0 or 2 here)
          double v = std::sqrt(M_PI / a);
          for (int k = 1; 2 * k <= n; ++k) v *= (2.0 * k - 1.0) / (2.0 * a);
          return v;
        };
        cart(x) += sh.contraction[i] * g1(lx) * g1(ly) * g1(lz);
      }
    }
    w.segment(off[is], 2 * sh.l + 1) = c2s_matrix(sh.l) * cart;
  }
  return w;
}

MatrixXd dipole_vectors(const BasisSet& density_basis, const MolecularStructure& s) {
  MatrixXd dip = MatrixXd::Zero(3, density_basis.n_funcs());
  const auto off = shell_offsets(density_basis);
  for (int is = 0; is < density_basis.n_shells(); ++is) {
    const Shell& sh = density_basis.shells[is];
    const Vector3d& A = s.coords[sh.atom_index];
    const auto& carts = cart_list(sh.l);
    MatrixXd cart = MatrixXd::Zero(3, carts.size());
    for (const PrimPair& pp : make_single(sh, A)) {
      const double pref = pp.coef * std::pow(M_PI / pp.p, 1.5);
      for (std::size_t x = 0; x < carts.size(); ++x) {
        const int lx = carts[x][0], ly = carts[x][1], lz = carts[x][2];
        const double ex0 = pp.ex.at(lx, 0, 0), ey0 = pp.ey.at(ly, 0, 0),
                     ez0 = pp.ez.at(lz, 0, 0);
        const double ex1 = pp.ex.at(lx, 0, 1), ey1 = pp.ey.at(ly, 0, 1),
                     ez1 = pp.ez.at(lz, 0, 1);
        cart(0, x) += pref * (ex1 + pp.P(0) * ex0) * ey0 * ez0;
        cart(1, x) += pref * ex0 * (ey1 + pp.P(1) * ey0) * ez0;
        cart(2, x) += pref * ex0 * ey0 * (ez1 + pp.P(2) * ez0);
      }
    }
    dip.block(0, off[is], 3, 2 * sh.l + 1) =
        cart * c2s_matrix(sh.l).transpose();
  }
  return dip;
}

MatrixXd field_integrals(const BasisSet& density_basis, const MolecularStructure& s,
                         const Vector3d& c) {
  MatrixXd out = MatrixXd::Zero(3, density_basis.n_funcs());
  const auto off = shell_offsets(density_basis);
  for (int is = 0; is < density_basis.n_shells(); ++is) {
    const Shell& sh = density_basis.shells[is];
    const Vector3d& A = s.coords[sh.atom_index];
    const auto& carts = cart_list(sh.l);
    MatrixXd cart = MatrixXd::Zero(3, carts.size());
    for (const PrimPair& pp : make_single(sh, A)) {
      const double pref = pp.coef * 2.0 * M_PI / pp.p;
      RTab r;
      hermite_coulomb(sh.l + 1, pp.p, pp.P - c, r);
      for (std::size_t x = 0; x < carts.size(); ++x) {
        const int lx = carts[x][0], ly = carts[x][1], lz = carts[x][2];
        for (int t = 0; t <= lx; ++t)
          for (int u = 0; u <= ly; ++u)
            for (int v = 0; v <= lz; ++v) {
              const double e = pp.ex.at(lx, 0, t) * pp.ey.at(ly, 0, u) * pp.ez.at(lz, 0, v);
              if (e == 0.0) continue;
              cart(0, x) -= pref * e * r.at(t + 1, u, v);
              cart(1, x) -= pref * e * r.at(t, u + 1, v);
              cart(2, x) -= pref * e * r.at(t, u, v + 1);
            }
      }
    }
    out.block(0, off[is], 3, 2 * sh.l + 1) = cart * c2s_matrix(sh.l).transpose();
  }
  return out;
}

}  // namespace integrals

IntegralTables build_tables(const MolecularStructure& s, const BasisSet& orbital_basis,
                            const BasisSet& density_basis, bool need_eri,
                            int eri_cap_nbf) {
  IntegralTables t;
  t.S = integrals::overlap(orbital_basis, orbital_basis, s);
  t.T = integrals::kinetic(orbital_basis, s);
  t.Vext = integrals::nuclear_attraction_matrix(orbital_basis, s);
  t.W = integrals::overlap(density_basis, density_basis, s);
  t.Wt = integrals::coulomb_2c2e(density_basis, s);
  t.Lt = integrals::coulomb_3c2e(density_basis, orbital_basis, s);
  if (need_eri) t.eri = integrals::eri_4c2e(orbital_basis, s, eri_cap_nbf);
  t.w = integrals::normalization_vector(density_basis);
  t.vext = integrals::nuclear_attraction_vector(density_basis, s);
  t.dip = integrals::dipole_vectors(density_basis, s);
  return t;
}

}  // namespace ofdft
