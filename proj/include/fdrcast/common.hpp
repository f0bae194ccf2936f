#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace fdrcast {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kStructural,
  kEmptyPool,
  kClustering,
  kDegenerate,
  kDigestMismatch,
  kConfig,
  kIo,
  kParse,
};

std::string_view error_code_name(ErrorCode code);

// Every failure raised by the toolkit. `code()` is stable and machine readable;
// the CLI turns it into the "error" field of its stderr JSON.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Named random substreams. One root seed fans out into these so that each
// pipeline stage is reproducible on its own.
enum class Stream : std::uint64_t {
  kMutation = 1,
  kSampling = 2,
  kCrossValidation = 3,
  kBootstrap = 4,
  kClustering = 5,
  kEvaluation = 6,
  kSynthetic = 7,
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t root, Stream stream, std::uint64_t index = 0);
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b);

// Runs fn(i) for i in [0, count) on up to `threads` worker threads. Work is
// split into contiguous blocks; callers write results into slot i so output
// never depends on the thread count. The first exception thrown is rethrown.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace fdrcast
