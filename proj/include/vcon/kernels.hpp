#pragma once

// Data-parallel inner loops behind the autodiff ops and optimizers.
//
// Every kernel has a scalar reference implementation; vectorized variants
// (AVX2+FMA on x86-64, NEON on AArch64) are selected once per process from
// the CPU's capabilities. Set VCON_SIMD=scalar to force the reference path.
// Within one process the selected table never changes, so runs stay
// bit-reproducible; across ISAs results agree to rounding.

#include <cstddef>
#include <string_view>

namespace vcon::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa) noexcept;

struct KernelTable {
    Isa isa;

    // c[n x m] = a[n x k] * b[k x m], all row-major, c overwritten.
    void (*gemm)(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b,
                 double* c);
    double (*dot)(std::size_t n, const double* x, const double* y);
    // y += alpha * x
    void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
    void (*add)(std::size_t n, const double* x, const double* y, double* out);
    void (*sub)(std::size_t n, const double* x, const double* y, double* out);
    void (*mul)(std::size_t n, const double* x, const double* y, double* out);
    void (*scale)(std::size_t n, double c, const double* x, double* out);
    void (*relu)(std::size_t n, const double* x, double* out);
    // out = grad where x > 0, else 0
    void (*relu_backward)(std::size_t n, const double* x, const double* grad, double* out);
    // Bias-corrected Adam moment update and parameter step over n entries.
    void (*adam)(std::size_t n, double lr, double beta1, double beta2, double eps, double bc1,
                 double bc2, const double* grad, double* m, double* v, double* param);
};

namespace scalar {
const KernelTable& table() noexcept;
}
#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
const KernelTable& table() noexcept;
}
#endif
#if defined(__aarch64__)
namespace neon {
const KernelTable& table() noexcept;
}
#endif

/// Whether the running CPU can execute the given variant.
bool isa_available(Isa isa) noexcept;

/// Table for a specific ISA; throws std::invalid_argument if unavailable.
const KernelTable& table_for(Isa isa);

/// The process-wide active table.
const KernelTable& active() noexcept;

}  // namespace vcon::kernels
