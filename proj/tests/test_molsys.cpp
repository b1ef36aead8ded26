#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "ofdft/molsys.hpp"

using namespace ofdft;

namespace {
const char* kDataDir = OFDFT_SOURCE_DIR "/data";

MolecularStructure h2(double r = 1.4) {
  return make_structure({Vector3d(0, 0, 0), Vector3d(0, 0, r)}, {1, 1});
}
}  // namespace

TEST_CASE("structure invariants") {
  auto s = h2();
  CHECK(s.n_electrons == 2);
  CHECK(s.n_atoms() == 2);
  // odd electron count rejected
  CHECK_THROWS_AS(make_structure({Vector3d(0, 0, 0)}, {1}), config_error);
  // coincident atoms rejected
  CHECK_THROWS_AS(make_structure({Vector3d(0, 0, 0), Vector3d(0, 0, 1e-8)}, {1, 1}),
                  config_error);
}

TEST_CASE("xyz parsing converts angstrom to bohr") {
  auto s = parse_xyz_text("2\ncomment\nH 0 0 0\nH 0 0 0.74\n", "<test>");
  CHECK(s.n_atoms() == 2);
  CHECK(s.atomic_numbers[0] == 1);
  CHECK(s.coords[1](2) == doctest::Approx(0.74 * 1.8897259886).epsilon(1e-12));
  CHECK_THROWS_AS(parse_xyz_text("junk\n", "<test>"), config_error);
  CHECK_THROWS_AS(parse_xyz_text("1\nc\nQq 0 0 0\n", "<test>"), config_error);
}

TEST_CASE("orbital basis from bundled file: H2 counting and index map") {
  auto defs = read_basis_file(std::string(kDataDir) + "/basis/minimal.bas");
  auto s = h2();
  auto b = build_orbital_basis(s, defs);
  CHECK(b.n_funcs() == 2);
  CHECK(b.funcs[0].atom == 0);
  CHECK(b.funcs[1].atom == 1);
  CHECK(b.funcs[0].tau == 0);
  CHECK(b.index_of(1, 0) == 1);
  // defs missing an element -> error naming it
  auto o2 = make_structure({Vector3d(0, 0, 0), Vector3d(0, 0, 2.3)}, {8, 8});
  ElementShellTable h_only;
  h_only[1] = defs.at(1);
  CHECK_THROWS_WITH_AS(build_orbital_basis(o2, h_only),
                       doctest::Contains("O"), config_error);
}

TEST_CASE("orbital basis ordering: increasing l then decreasing exponent") {
  auto defs = read_basis_file(std::string(kDataDir) + "/basis/minimal.bas");
  auto li = make_structure({Vector3d(0, 0, 0), Vector3d(0, 0, 3.0)}, {3, 1});
  auto b = build_orbital_basis(li, defs);
  // Li: two s shells then one p shell -> 2 + 3 = 5 funcs, then H s
  CHECK(b.n_funcs() == 6);
  CHECK(b.shells[0].l == 0);
  CHECK(b.shells[1].l == 0);
  CHECK(b.shells[2].l == 1);
  CHECK(b.shells[0].exponents.front() > b.shells[1].exponents.front());
  // within-shell primitives strictly decreasing
  for (const auto& sh : b.shells)
    for (std::size_t i = 1; i < sh.exponents.size(); ++i)
      CHECK(sh.exponents[i] < sh.exponents[i - 1]);
}

TEST_CASE("index map round-trips and atom blocks are contiguous") {
  auto defs = read_basis_file(std::string(kDataDir) + "/basis/minimal.bas");
  auto s = make_structure({Vector3d(0, 0, 0), Vector3d(0, 0, 2.1), Vector3d(0, 1.9, -0.7)},
                          {8, 1, 1});
  auto b = build_orbital_basis(s, defs);
  for (int mu = 0; mu < b.n_funcs(); ++mu) {
    const auto& f = b.funcs[mu];
    CHECK(b.index_of(f.atom, f.tau) == mu);
  }
  int expect = 0;
  for (int a = 0; a < s.n_atoms(); ++a)
    for (int mu : b.atom_funcs[a]) CHECK(mu == expect++);
  CHECK(expect == b.n_funcs());
}

TEST_CASE("even-tempered sequence example") {
  AnchorTable anchors;
  anchors[1] = {0.4, 6.25};
  auto s = make_structure({Vector3d(0, 0, 0), Vector3d(0, 0, 1.4)}, {1, 1});
  auto b = build_density_basis(s, 2.5, anchors, 0);
  std::set<double> exps;
  for (const auto& sh : b.shells)
    if (sh.atom_index == 0) exps.insert(sh.exponents[0]);
  std::vector<double> want = {0.4, 1.0, 2.5, 6.25};
  CHECK(exps.size() == want.size());
  for (double w : want) {
    bool found = false;
    for (double e : exps)
      if (std::abs(e - w) < 1e-12) found = true;
    CHECK(found);
  }
  CHECK_THROWS_AS(build_density_basis(s, 0.9, anchors, 0), config_error);
}

TEST_CASE("density basis: per-l sequences and 2l+1 counting") {
  AnchorTable anchors;
  anchors[1] = {0.4, 6.25};
  auto s = h2();
  auto b = build_density_basis(s, 2.5, anchors, 1);
  // per atom: 4 s + 4 p shells -> 4 + 12 = 16 funcs
  CHECK(b.funcs_on_atom(0) == 16);
  CHECK(b.n_funcs() == 32);
  CHECK(density_dims_per_element(1, 2.5, anchors, 1) == 16);
  // adjacent exponent ratio within an (atom, l) block equals beta
  for (int l = 0; l <= 1; ++l) {
    std::vector<double> exps;
    for (const auto& sh : b.shells)
      if (sh.atom_index == 0 && sh.l == l) exps.push_back(sh.exponents[0]);
    for (std::size_t i = 1; i < exps.size(); ++i)
      CHECK(exps[i - 1] / exps[i] == doctest::Approx(2.5).epsilon(1e-12));
  }
}

TEST_CASE("anchor derivation from orbital defs") {
  auto defs = read_basis_file(std::string(kDataDir) + "/basis/minimal.bas");
  auto anchors = derive_anchors(defs);
  CHECK(anchors.at(1).min_exp == doctest::Approx(0.16885540 / 2).epsilon(1e-12));
  CHECK(anchors.at(1).max_exp == doctest::Approx(2 * 3.42525091).epsilon(1e-12));
  CHECK(anchors.at(3).min_exp == doctest::Approx(0.0480887 / 2).epsilon(1e-12));
  CHECK(anchors.at(3).max_exp == doctest::Approx(2 * 16.1195750).epsilon(1e-12));
}

TEST_CASE("atom reordering permutes basis blocks only") {
  auto defs = read_basis_file(std::string(kDataDir) + "/basis/minimal.bas");
  auto anchors = derive_anchors(defs);
  auto s1 = make_structure({Vector3d(0, 0, 0), Vector3d(0, 0, 3.0)}, {3, 1});
  auto s2 = make_structure({Vector3d(0, 0, 3.0), Vector3d(0, 0, 0)}, {1, 3});
  auto b1 = build_density_basis(s1, 2.5, anchors, 2);
  auto b2 = build_density_basis(s2, 2.5, anchors, 2);
  CHECK(b1.n_funcs() == b2.n_funcs());
  // atom 0 of s1 (Li) must match atom 1 of s2 (Li) function-for-function
  REQUIRE(b1.funcs_on_atom(0) == b2.funcs_on_atom(1));
  for (int t = 0; t < b1.funcs_on_atom(0); ++t) {
    const auto& fa = b1.funcs[b1.index_of(0, t)];
    const auto& fb = b2.funcs[b2.index_of(1, t)];
    CHECK(fa.l == fb.l);
    CHECK(fa.m == fb.m);
    CHECK(b1.shells[fa.shell].exponents == b2.shells[fb.shell].exponents);
  }
}

TEST_CASE("contracted shell normalization: unit self-overlap") {
  // check against the closed-form self-overlap of the stored contraction
  auto defs = read_basis_file(std::string(kDataDir) + "/basis/minimal.bas");
  for (const auto& [z, shell_defs] : defs) {
    auto s = make_structure({Vector3d(0, 0, 0), Vector3d(0, 0, 40.0)}, {z, z});
    auto b = build_orbital_basis(s, defs);
    for (const auto& sh : b.shells) {
      if (sh.atom_index != 0) continue;
      double total = 0.0;
      const double ang = solid_harmonic_angular_norm(sh.l);
      for (std::size_t i = 0; i < sh.exponents.size(); ++i)
        for (std::size_t j = 0; j < sh.exponents.size(); ++j)
          total += sh.contraction[i] * sh.contraction[j] * ang *
                   radial_gauss_integral(sh.l, sh.exponents[i] + sh.exponents[j]);
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}
