#pragma once

#include <cstddef>
#include <cstdint>

/// Dense numeric kernels. The default implementations parallelize their
/// outer loop with OpenMP once the work is large enough to amortize a
/// parallel region; `reference::` holds the plain serial versions the tests
/// compare against.
namespace zhoi::kernels {

/// C(m x n) (+)= A(m x k) * B(k x n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
/// C(m x n) (+)= A(m x k) * B(n x k)^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
/// C(m x n) (+)= A(k x m)^T * B(k x n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);

/// 3x3 depth-wise convolution with zero padding on a token-major grid:
/// x is (h*w) x channels, weight is 9 x channels (tap = (dy+1)*3 + (dx+1)).
void depthwise3x3(const double* x, const double* weight, double* y, std::size_t h,
                  std::size_t w, std::size_t channels);
/// Backward of depthwise3x3: accumulates into dx and dweight.
void depthwise3x3_backward(const double* x, const double* weight, const double* dy,
                           double* dx, double* dweight, std::size_t h, std::size_t w,
                           std::size_t channels);

namespace reference {
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
void depthwise3x3(const double* x, const double* weight, double* y, std::size_t h,
                  std::size_t w, std::size_t channels);
}  // namespace reference

/// Floating-point operation counter fed by the autograd ops (multiply-add = 2).
/// Used to verify asymptotic cost claims; not thread-safe by design of use.
struct FlopCounter {
  static std::uint64_t value() noexcept;
  static void reset() noexcept;
  static void add(std::uint64_t n) noexcept;
};

}  // namespace zhoi::kernels
