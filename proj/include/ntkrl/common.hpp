#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace ntkrl {

using TokenId = std::int32_t;  // token ids are 1-based: 1..V
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Invalid configuration: bad sizes, unknown fields, mismatched dimensions.
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
// A caller broke an operation precondition.
struct ContractError : std::runtime_error { using std::runtime_error::runtime_error; };
// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError : std::runtime_error { using std::runtime_error::runtime_error; };
// Stored artifact does not match its recorded digest.
struct IntegrityError : std::runtime_error { using std::runtime_error::runtime_error; };

std::uint64_t splitmix64(std::uint64_t x);

/// Deterministic RNG wrapper. Every random choice in the project flows
/// through an explicit Rng value. split(stream) derives an independent
/// generator from the *original seed* (not from generator state), so the
/// substream a consumer sees does not depend on how many draws other
/// consumers made before it.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  double uniform();                      // [0, 1), 53-bit mantissa
  double uniform(double lo, double hi);  // [lo, hi)
  int uniform_int(int n);                // unbiased draw from [0, n)
  Rng split(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
};

// Round-trip-exact text for a double ("%.17g"); used for all CSV output so
// reruns are byte-comparable.
std::string fmt_double(double v);

}  // namespace ntkrl
