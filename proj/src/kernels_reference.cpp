#include "zhoi/kernels.hpp"

namespace zhoi::kernels::reference {

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
}

void depthwise3x3(const double* x, const double* weight, double* y, std::size_t h,
                  std::size_t w, std::size_t channels) {
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col)
      for (std::size_t ch = 0; ch < channels; ++ch) {
        double s = 0;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const long long sr = static_cast<long long>(r) + ky - 1;
            const long long sc = static_cast<long long>(col) + kx - 1;
            if (sr < 0 || sc < 0 || sr >= static_cast<long long>(h) ||
                sc >= static_cast<long long>(w))
              continue;
            s += weight[(ky * 3 + kx) * channels + ch] *
                 x[(static_cast<std::size_t>(sr) * w + static_cast<std::size_t>(sc)) * channels + ch];
          }
        y[(r * w + col) * channels + ch] = s;
      }
}

}  // namespace zhoi::kernels::reference
