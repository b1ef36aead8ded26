#include <cmath>
#include <vector>

#include "ofdft/grid.hpp"

namespace ofdft {
namespace grid {
namespace {

// Lebedev-Laikov rules are unions of octahedral symmetry orbits. Each table
// row names an orbit family, its free generator parameters, and the shared
// per-point weight.
enum class Family {
  axis6,    // (+-1, 0, 0) and axis permutations
  edge12,   // (0, +-t, +-t), t = 1/sqrt(2)
  corner8,  // (+-t, +-t, +-t), t = 1/sqrt(3)
  aab24,    // (+-a, +-a, +-b), b = sqrt(1 - 2a^2), all placements
  ab024,    // (+-a, +-b, 0), b = sqrt(1 - a^2), all placements
  abc48     // (+-a, +-b, +-c), c = sqrt(1 - a^2 - b^2), all permutations
};

struct OrbitRow {
  Family family;
  double a, b, weight;
};

struct PointList {
  std::vector<double> x, y, z, w;
  void push(double px, double py, double pz, double pw) {
    x.push_back(px);
    y.push_back(py);
    z.push_back(pz);
    w.push_back(pw);
  }
};

void expand(PointList& out, const OrbitRow& row) {
  const double v = row.weight;
  switch (row.family) {
    case Family::axis6:
      for (int d = 0; d < 3; ++d)
        for (double s : {1.0, -1.0}) {
          double p[3] = {0, 0, 0};
          p[d] = s;
          out.push(p[0], p[1], p[2], v);
        }
      break;
    case Family::edge12: {
      const double t = std::sqrt(0.5);
      for (int zero = 0; zero < 3; ++zero)
        for (double s1 : {t, -t})
          for (double s2 : {t, -t}) {
            double p[3];
            p[zero] = 0.0;
            p[(zero + 1) % 3] = s1;
            p[(zero + 2) % 3] = s2;
            out.push(p[0], p[1], p[2], v);
          }
      break;
    }
    case Family::corner8: {
      const double t = std::sqrt(1.0 / 3.0);
      for (double sx : {t, -t})
        for (double sy : {t, -t})
          for (double sz : {t, -t}) out.push(sx, sy, sz, v);
      break;
    }
    case Family::aab24: {
      const double a = row.a;
      const double b = std::sqrt(std::max(0.0, 1.0 - 2.0 * a * a));
      for (int bpos = 0; bpos < 3; ++bpos)
        for (double s1 : {a, -a})
          for (double s2 : {a, -a})
            for (double sb : {b, -b}) {
              double p[3];
              p[bpos] = sb;
              p[(bpos + 1) % 3] = s1;
              p[(bpos + 2) % 3] = s2;
              out.push(p[0], p[1], p[2], v);
            }
      break;
    }
    case Family::ab024: {
      const double a = row.a;
      const double b = std::sqrt(std::max(0.0, 1.0 - a * a));
      for (int zero = 0; zero < 3; ++zero)
        for (bool swap : {false, true})
          for (double s1 : {1.0, -1.0})
            for (double s2 : {1.0, -1.0}) {
              double p[3];
              p[zero] = 0.0;
              p[(zero + 1) % 3] = s1 * (swap ? b : a);
              p[(zero + 2) % 3] = s2 * (swap ? a : b);
              out.push(p[0], p[1], p[2], v);
            }
      break;
    }
    case Family::abc48: {
      const double c = std::sqrt(std::max(0.0, 1.0 - row.a * row.a - row.b * row.b));
      const double base[3] = {row.a, row.b, c};
      static const int perm[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                     {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
      for (const auto& pr : perm)
        for (double sx : {1.0, -1.0})
          for (double sy : {1.0, -1.0})
            for (double sz : {1.0, -1.0})
              out.push(sx * base[pr[0]], sy * base[pr[1]], sz * base[pr[2]], v);
      break;
    }
  }
}

const std::vector<OrbitRow>* rule_table(int order) {
  static const std::vector<OrbitRow> rule110 = {
      {Family::axis6, 0.0, 0.0, 0.3828270494937162e-2},
      {Family::corner8, 0.0, 0.0, 0.9793737512487512e-2},
      {Family::aab24, 0.1851156353447362, 0.0, 0.8211737283191111e-2},
      {Family::aab24, 0.6904210483822922, 0.0, 0.9942814891178103e-2},
      {Family::aab24, 0.3956894730559419, 0.0, 0.9595471336070963e-2},
      {Family::ab024, 0.4783690288121502, 0.0, 0.9694996361663028e-2},
  };
  static const std::vector<OrbitRow> rule194 = {
      {Family::axis6, 0.0, 0.0, 0.1782340447244611e-2},
      {Family::edge12, 0.0, 0.0, 0.5716905949977102e-2},
      {Family::corner8, 0.0, 0.0, 0.5573383178848738e-2},
      {Family::aab24, 0.6712973442695226, 0.0, 0.5608704082587997e-2},
      {Family::aab24, 0.2892465627575439, 0.0, 0.5158237711805383e-2},
      {Family::aab24, 0.4446933178717437, 0.0, 0.5518771467273614e-2},
      {Family::aab24, 0.1299335447650067, 0.0, 0.4106777028169394e-2},
      {Family::ab024, 0.3457702197611283, 0.0, 0.5051846064614808e-2},
      {Family::abc48, 0.1590417105383530, 0.8360360154824589, 0.5530248916233094e-2},
  };
  static const std::vector<OrbitRow> rule302 = {
      {Family::axis6, 0.0, 0.0, 0.8545911725128148e-3},
      {Family::corner8, 0.0, 0.0, 0.3599119285025571e-2},
      {Family::aab24, 0.3515640345570105, 0.0, 0.3449788424305883e-2},
      {Family::aab24, 0.6566329410219612, 0.0, 0.3604822601419882e-2},
      {Family::aab24, 0.4729054132581005, 0.0, 0.3576729661743367e-2},
      {Family::aab24, 0.9618308522614784e-1, 0.0, 0.2352101413689164e-2},
      {Family::aab24, 0.2219645236294178, 0.0, 0.3108953122413675e-2},
      {Family::aab24, 0.7011766416089545, 0.0, 0.3650045807677255e-2},
      {Family::ab024, 0.2644152887060663, 0.0, 0.2982344963171804e-2},
      {Family::ab024, 0.5718955891878961, 0.0, 0.3600820932216460e-2},
      {Family::abc48, 0.2510034751770465, 0.8000727494073952, 0.3571540554273387e-2},
      {Family::abc48, 0.1233548532583327, 0.4127724083168531, 0.3392312205006170e-2},
  };
  switch (order) {
    case 110:
      return &rule110;
    case 194:
      return &rule194;
    case 302:
      return &rule302;
    default:
      return nullptr;
  }
}

}  // namespace

bool lebedev_rule(int order, MatrixXd& points, VectorXd& weights) {
  const std::vector<OrbitRow>* rows = rule_table(order);
  if (rows == nullptr) return false;
  PointList pts;
  for (const auto& row : *rows) expand(pts, row);
  const int n = static_cast<int>(pts.w.size());
  points.resize(n, 3);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    points(i, 0) = pts.x[i];
    points(i, 1) = pts.y[i];
    points(i, 2) = pts.z[i];
    weights(i) = pts.w[i];
  }
  return true;
}

}  // namespace grid
}  // namespace ofdft
