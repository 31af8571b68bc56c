#include <cstdlib>
#include <stdexcept>
#include <string>

#include "vcon/kernels.hpp"

namespace vcon::kernels {

std::string_view isa_name(Isa isa) noexcept {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "unknown";
}

bool isa_available(Isa isa) noexcept {
    switch (isa) {
        case Isa::scalar: return true;
        case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
            return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
            return false;
#endif
        case Isa::neon:
#if defined(__aarch64__)
            return true;
#else
            return false;
#endif
    }
    return false;
}

const KernelTable& table_for(Isa isa) {
    if (!isa_available(isa))
        throw std::invalid_argument("kernel variant '" + std::string(isa_name(isa)) +
                                    "' is not available on this CPU");
    switch (isa) {
#if defined(__x86_64__) || defined(_M_X64)
        case Isa::avx2: return avx2::table();
#endif
#if defined(__aarch64__)
        case Isa::neon: return neon::table();
#endif
        default: return scalar::table();
    }
}

namespace {

const KernelTable& select() noexcept {
    if (const char* env = std::getenv("VCON_SIMD")) {
        const std::string_view want(env);
        for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon})
            if (want == isa_name(isa) && isa_available(isa)) return table_for(isa);
    }
    if (isa_available(Isa::avx2)) return table_for(Isa::avx2);
    if (isa_available(Isa::neon)) return table_for(Isa::neon);
    return scalar::table();
}

}  // namespace

const KernelTable& active() noexcept {
    static const KernelTable& table = select();
    return table;
}

}  // namespace vcon::kernels
