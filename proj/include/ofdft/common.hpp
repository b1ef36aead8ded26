#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ofdft {

using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

// -- unit conversions -------------------------------------------------------
inline constexpr double kAngstromToBohr = 1.8897259886;
inline constexpr double kHartreeToKcal = 627.509474;

// -- error taxonomy (maps to CLI exit codes 2/3) ----------------------------
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// broken caller contract (dimension mismatch, missing precondition)
struct contract_error : std::logic_error {
  using std::logic_error::logic_error;
};

// -- elements ---------------------------------------------------------------
int element_number(const std::string& symbol);  // throws config_error if unknown
const std::string& element_symbol(int z);

// -- hashing (content fingerprints embedded in run outputs) -----------------
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 1469598103934665603ull);
std::uint64_t fnv1a64_file(const std::string& path);  // throws config_error if unreadable
std::string hash_hex(std::uint64_t h);

// -- randomness -------------------------------------------------------------
// Single stream per run. normal() is a hand-rolled Box-Muller so that byte
// identical results do not depend on the standard library's distribution
// implementation.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : eng_(seed) {}
  double uniform() {  // [0, 1)
    return (eng_() >> 11) * (1.0 / 9007199254740992.0);
  }
  double normal();
  std::uint64_t raw() { return eng_(); }
  // Fisher-Yates with this stream; stable across platforms.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform() * i);
      if (j >= i) j = i - 1;
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// -- small helpers ----------------------------------------------------------
std::string read_text_file(const std::string& path);  // throws config_error
void write_text_file(const std::string& path, const std::string& content);

inline double sq(double x) { return x * x; }

}  // namespace ofdft
