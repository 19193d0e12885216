#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace decopt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DECOPT_DEFINE_ERROR(Name)            \
  class Name : public Error {                \
   public:                                   \
    explicit Name(const std::string& what)   \
        : Error(std::string(#Name ": ") + what) {} \
  }

DECOPT_DEFINE_ERROR(InvalidEdge);
DECOPT_DEFINE_ERROR(DisconnectedGraph);
DECOPT_DEFINE_ERROR(NotConverged);
DECOPT_DEFINE_ERROR(DimensionMismatch);
DECOPT_DEFINE_ERROR(NotStronglyConvex);
DECOPT_DEFINE_ERROR(MissingCurvature);
DECOPT_DEFINE_ERROR(NonpositiveL);
DECOPT_DEFINE_ERROR(InvalidTolerance);
DECOPT_DEFINE_ERROR(BudgetExceeded);
DECOPT_DEFINE_ERROR(NonPositiveData);
DECOPT_DEFINE_ERROR(ConfigError);
DECOPT_DEFINE_ERROR(TopologyViolation);
DECOPT_DEFINE_ERROR(DivergenceDetected);
DECOPT_DEFINE_ERROR(InvalidArgument);

#undef DECOPT_DEFINE_ERROR

/// Runs fn(i) for i in [0, count). Work is split into contiguous chunks, one
/// per thread; each index is handled by exactly one thread, so callers that
/// write only to slot i get schedule-independent results.
template <class Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  if (threads <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), count);
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = count * w / workers;
      const std::size_t end = count * (w + 1) / workers;
      pool.emplace_back([&, begin, end] {
        try {
          for (std::size_t i = begin; i < end; ++i) fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace decopt
