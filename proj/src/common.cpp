#include "ofdft/common.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ofdft {

namespace {
constexpr std::array<const char*, 10> kSymbols = {"X", "H",  "He", "Li", "Be",
                                                  "B", "C",  "N",  "O",  "F"};
}  // namespace

int element_number(const std::string& symbol) {
  for (int z = 1; z < static_cast<int>(kSymbols.size()); ++z)
    if (symbol == kSymbols[z]) return z;
  throw config_error("unknown element symbol: " + symbol);
}

const std::string& element_symbol(int z) {
  static const std::vector<std::string> syms(kSymbols.begin(), kSymbols.end());
  if (z < 1 || z >= static_cast<int>(syms.size()))
    throw config_error("unsupported atomic number: " + std::to_string(z));
  return syms[z];
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot open file for hashing: " + path);
  std::uint64_t h = 1469598103934665603ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

double RngStream::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0, u2 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 1e-300);
  u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw config_error("cannot write file: " + path);
  out << content;
}

}  // namespace ofdft
