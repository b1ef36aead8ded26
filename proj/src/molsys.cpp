#include "ofdft/molsys.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ofdft {

void MolecularStructure::validate() const {
  if (coords.size() != atomic_numbers.size())
    throw contract_error("structure: coords/atomic_numbers size mismatch");
  if (coords.empty()) throw config_error("structure: no atoms");
  for (int z : atomic_numbers)
    if (z <= 0) throw config_error("structure: nonpositive atomic number");
  if (n_electrons % 2 != 0)
    throw config_error("structure: odd electron count (restricted formalism needs an even count)");
  for (std::size_t i = 0; i < coords.size(); ++i)
    for (std::size_t j = i + 1; j < coords.size(); ++j)
      if ((coords[i] - coords[j]).norm() < 1e-6)
        throw config_error("structure: atoms " + std::to_string(i) + " and " +
                           std::to_string(j) + " closer than 1e-6 bohr");
}

MolecularStructure make_structure(std::vector<Vector3d> coords_bohr,
                                  std::vector<int> atomic_numbers) {
  MolecularStructure s;
  s.coords = std::move(coords_bohr);
  s.atomic_numbers = std::move(atomic_numbers);
  s.n_electrons = 0;
  for (int z : s.atomic_numbers) s.n_electrons += z;
  s.validate();
  return s;
}

MolecularStructure parse_xyz_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw config_error(origin + ": empty XYZ file");
  int n = 0;
  try {
    n = std::stoi(line);
  } catch (...) {
    throw config_error(origin + ": first XYZ line must be the atom count");
  }
  if (n <= 0) throw config_error(origin + ": nonpositive atom count");
  std::getline(in, line);  // comment
  std::vector<Vector3d> coords;
  std::vector<int> zs;
  for (int i = 0; i < n; ++i) {
    if (!std::getline(in, line))
      throw config_error(origin + ": truncated XYZ file");
    std::istringstream ls(line);
    std::string sym;
    double x, y, z;
    if (!(ls >> sym >> x >> y >> z))
      throw config_error(origin + ": malformed XYZ atom line: " + line);
    zs.push_back(element_number(sym));
    coords.push_back(Vector3d(x, y, z) * kAngstromToBohr);
  }
  return make_structure(std::move(coords), std::move(zs));
}

MolecularStructure read_xyz(const std::string& path) {
  return parse_xyz_text(read_text_file(path), path);
}

double solid_harmonic_angular_norm(int l) {
  switch (l) {
    case 0: return 4.0 * M_PI;
    case 1: return 4.0 * M_PI / 3.0;
    case 2: return 4.0 * M_PI / 5.0;
    default: throw contract_error("solid_harmonic_angular_norm: l > 2 unsupported");
  }
}

double radial_gauss_integral(int l, double a) {
  // int_0^inf r^(2l+2) exp(-a r^2) dr = Gamma(l + 3/2) / (2 a^(l+3/2))
  static const double gamma_half[3] = {std::sqrt(M_PI) / 2.0, 3.0 * std::sqrt(M_PI) / 4.0,
                                       15.0 * std::sqrt(M_PI) / 8.0};
  if (l < 0 || l > 2) throw contract_error("radial_gauss_integral: l out of range");
  return gamma_half[l] / (2.0 * std::pow(a, l + 1.5));
}

namespace {

// Scale contraction coefficients so every m component of the shell has unit
// self-overlap; coefficients become the weights of raw primitive Gaussians.
Shell normalize_shell(int atom, int l, std::vector<double> exps, std::vector<double> coefs) {
  if (exps.size() != coefs.size() || exps.empty())
    throw config_error("shell: exponent/coefficient count mismatch");
  for (double e : exps)
    if (e <= 0.0) throw config_error("shell: nonpositive exponent");
  // sort primitives by decreasing exponent
  std::vector<std::size_t> order(exps.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return exps[a] > exps[b];
  });
  std::vector<double> e2(exps.size()), c2(coefs.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    e2[i] = exps[order[i]];
    c2[i] = coefs[order[i]];
  }
  for (std::size_t i = 1; i < e2.size(); ++i)
    if (!(e2[i] < e2[i - 1]))
      throw config_error("shell: duplicate exponent in contraction");

  const double ang = solid_harmonic_angular_norm(l);
  // primitive self-norms
  std::vector<double> n(e2.size());
  for (std::size_t i = 0; i < n.size(); ++i)
    n[i] = 1.0 / std::sqrt(ang * radial_gauss_integral(l, 2.0 * e2[i]));
  double total = 0.0;
  for (std::size_t i = 0; i < e2.size(); ++i)
    for (std::size_t j = 0; j < e2.size(); ++j)
      total += c2[i] * c2[j] * n[i] * n[j] * ang * radial_gauss_integral(l, e2[i] + e2[j]);
  if (total <= 0.0) throw config_error("shell: nonpositive self-overlap");
  const double scale = 1.0 / std::sqrt(total);
  Shell sh;
  sh.atom_index = atom;
  sh.l = l;
  sh.exponents = std::move(e2);
  sh.contraction.resize(sh.exponents.size());
  for (std::size_t i = 0; i < sh.contraction.size(); ++i)
    sh.contraction[i] = c2[i] * n[i] * scale;
  return sh;
}

BasisSet assemble(const MolecularStructure& structure,
                  const std::map<int, std::vector<Shell>>& per_element) {
  BasisSet b;
  b.atom_funcs.resize(structure.n_atoms());
  for (int a = 0; a < structure.n_atoms(); ++a) {
    const int z = structure.atomic_numbers[a];
    auto it = per_element.find(z);
    if (it == per_element.end())
      throw config_error("no basis shells defined for element " + element_symbol(z));
    int tau = 0;
    for (const Shell& proto : it->second) {
      Shell sh = proto;
      sh.atom_index = a;
      const int shell_index = b.n_shells();
      b.shells.push_back(sh);
      for (int m = -sh.l; m <= sh.l; ++m) {
        BasisFunction f;
        f.atom = a;
        f.shell = shell_index;
        f.l = sh.l;
        f.m = m;
        f.tau = tau++;
        b.atom_funcs[a].push_back(b.n_funcs());
        b.funcs.push_back(f);
      }
    }
  }
  return b;
}

void sort_shell_protos(std::vector<Shell>& shells) {
  // deterministic ordering: increasing l, then decreasing leading exponent
  std::stable_sort(shells.begin(), shells.end(), [](const Shell& a, const Shell& b) {
    if (a.l != b.l) return a.l < b.l;
    return a.exponents.front() > b.exponents.front();
  });
}

}  // namespace

ElementShellTable parse_basis_text(const std::string& text, const std::string& origin) {
  ElementShellTable table;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string sym, lletter;
    if (!(ls >> sym)) continue;  // blank
    if (!(ls >> lletter))
      throw config_error(origin + ":" + std::to_string(lineno) + ": missing shell type");
    const int z = element_number(sym);
    int l = -1;
    if (lletter == "S" || lletter == "s") l = 0;
    else if (lletter == "P" || lletter == "p") l = 1;
    else if (lletter == "D" || lletter == "d") l = 2;
    else
      throw config_error(origin + ":" + std::to_string(lineno) +
                         ": unsupported shell type " + lletter);
    ShellDef def;
    def.l = l;
    double e, c;
    while (ls >> e >> c) {
      def.exponents.push_back(e);
      def.coefficients.push_back(c);
    }
    if (def.exponents.empty())
      throw config_error(origin + ":" + std::to_string(lineno) + ": no primitives");
    table[z].push_back(std::move(def));
  }
  if (table.empty()) throw config_error(origin + ": no shells found");
  return table;
}

ElementShellTable read_basis_file(const std::string& path) {
  return parse_basis_text(read_text_file(path), path);
}

BasisSet build_orbital_basis(const MolecularStructure& structure,
                             const ElementShellTable& defs) {
  std::map<int, std::vector<Shell>> per_element;
  for (const auto& [z, shell_defs] : defs) {
    std::vector<Shell> protos;
    for (const ShellDef& d : shell_defs)
      protos.push_back(normalize_shell(0, d.l, d.exponents, d.coefficients));
    sort_shell_protos(protos);
    per_element[z] = std::move(protos);
  }
  return assemble(structure, per_element);
}

AnchorTable derive_anchors(const ElementShellTable& defs) {
  AnchorTable anchors;
  for (const auto& [z, shell_defs] : defs) {
    double lo = 1e300, hi = 0.0;
    for (const ShellDef& d : shell_defs)
      for (double e : d.exponents) {
        lo = std::min(lo, e);
        hi = std::max(hi, e);
      }
    anchors[z] = AnchorBounds{lo / 2.0, 2.0 * hi};
  }
  return anchors;
}

namespace {

std::vector<double> even_tempered_sequence(double beta, const AnchorBounds& b) {
  if (beta <= 1.0) throw config_error("density basis: tempering ratio must exceed 1");
  if (b.min_exp <= 0.0 || b.max_exp <= b.min_exp)
    throw config_error("density basis: anchor bounds must be positive with min < max");
  std::vector<double> seq;
  for (double a = b.min_exp; a <= b.max_exp * (1.0 + 1e-9); a *= beta)
    seq.push_back(a);
  return seq;
}

std::vector<Shell> density_protos(int z, double beta, const AnchorTable& anchors, int l_max) {
  auto it = anchors.find(z);
  if (it == anchors.end())
    throw config_error("no density-basis anchors for element " + element_symbol(z));
  const auto seq = even_tempered_sequence(beta, it->second);
  std::vector<Shell> protos;
  for (int l = 0; l <= l_max; ++l)
    for (double a : seq)
      protos.push_back(normalize_shell(0, l, {a}, {1.0}));
  sort_shell_protos(protos);
  return protos;
}

}  // namespace

BasisSet build_density_basis(const MolecularStructure& structure, double beta,
                             const AnchorTable& anchors, int l_max) {
  if (l_max < 0 || l_max > 2)
    throw config_error("density basis: l_max must be in [0, 2]");
  std::map<int, std::vector<Shell>> per_element;
  for (int z : structure.atomic_numbers)
    if (!per_element.count(z)) per_element[z] = density_protos(z, beta, anchors, l_max);
  return assemble(structure, per_element);
}

int density_dims_per_element(int z, double beta, const AnchorTable& anchors, int l_max) {
  int dims = 0;
  for (const Shell& sh : density_protos(z, beta, anchors, l_max)) dims += 2 * sh.l + 1;
  return dims;
}

}  // namespace ofdft
