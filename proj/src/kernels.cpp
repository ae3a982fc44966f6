#include "zhoi/kernels.hpp"

#include <algorithm>
#include <cstring>

namespace zhoi::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = std::size_t{1} << 16;

std::uint64_t g_flops = 0;

}  // namespace

std::uint64_t FlopCounter::value() noexcept { return g_flops; }
void FlopCounter::reset() noexcept { g_flops = 0; }
void FlopCounter::add(std::uint64_t n) noexcept { g_flops += n; }

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kParallelWork && m > 1;
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (par)
  for (long long ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kParallelWork && m > 1;
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (par)
  for (long long ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      // Four partial sums let the compiler vectorize without -ffast-math.
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += arow[p] * brow[p];
        s1 += arow[p + 1] * brow[p + 1];
        s2 += arow[p + 2] * brow[p + 2];
        s3 += arow[p + 3] * brow[p + 3];
      }
      for (; p < k; ++p) s0 += arow[p] * brow[p];
      const double s = (s0 + s1) + (s2 + s3);
      crow[j] = accumulate ? crow[j] + s : s;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kParallelWork && m > 1;
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (par)
  for (long long ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void depthwise3x3(const double* x, const double* weight, double* y, std::size_t h,
                  std::size_t w, std::size_t channels) {
  const auto hh = static_cast<long long>(h);
  const auto ww = static_cast<long long>(w);
  const bool par = h * w * channels * 9 >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long long r = 0; r < hh; ++r) {
    for (long long col = 0; col < ww; ++col) {
      double* out = y + static_cast<std::size_t>(r * ww + col) * channels;
      std::fill(out, out + channels, 0.0);
      for (long long dy = -1; dy <= 1; ++dy) {
        const long long sr = r + dy;
        if (sr < 0 || sr >= hh) continue;
        for (long long dx = -1; dx <= 1; ++dx) {
          const long long sc = col + dx;
          if (sc < 0 || sc >= ww) continue;
          const double* in = x + static_cast<std::size_t>(sr * ww + sc) * channels;
          const double* wt = weight + static_cast<std::size_t>((dy + 1) * 3 + (dx + 1)) * channels;
          for (std::size_t ch = 0; ch < channels; ++ch) out[ch] += wt[ch] * in[ch];
        }
      }
    }
  }
}

void depthwise3x3_backward(const double* x, const double* weight, const double* dy,
                           double* dx, double* dweight, std::size_t h, std::size_t w,
                           std::size_t channels) {
  // Serial: the weight gradient is a reduction over every position.
  const auto hh = static_cast<long long>(h);
  const auto ww = static_cast<long long>(w);
  for (long long r = 0; r < hh; ++r) {
    for (long long col = 0; col < ww; ++col) {
      const double* g = dy + static_cast<std::size_t>(r * ww + col) * channels;
      for (long long oy = -1; oy <= 1; ++oy) {
        const long long sr = r + oy;
        if (sr < 0 || sr >= hh) continue;
        for (long long ox = -1; ox <= 1; ++ox) {
          const long long sc = col + ox;
          if (sc < 0 || sc >= ww) continue;
          const auto src = static_cast<std::size_t>(sr * ww + sc) * channels;
          const auto tap = static_cast<std::size_t>((oy + 1) * 3 + (ox + 1)) * channels;
          for (std::size_t ch = 0; ch < channels; ++ch) {
            if (dx) dx[src + ch] += weight[tap + ch] * g[ch];
            if (dweight) dweight[tap + ch] += x[src + ch] * g[ch];
          }
        }
      }
    }
  }
}

}  // namespace zhoi::kernels
