#include <cstdlib>
#include <string>

#include "mmfuse/error.hpp"
#include "mmfuse/kernels/kernels.hpp"

namespace mmfuse::kernels {
namespace {

const Backend* resolve_from_env() {
    const char* env = std::getenv("MMFUSE_KERNELS");
    std::string choice = env ? env : "auto";
    if (choice == "scalar") {
        return &scalar_backend();
    }
    if (choice == "avx2") {
        const Backend* b = avx2_backend();
        if (!b) {
            throw ConfigError("MMFUSE_KERNELS=avx2 but this CPU/build has no AVX2+FMA");
        }
        return b;
    }
    if (choice == "neon") {
        const Backend* b = neon_backend();
        if (!b) {
            throw ConfigError("MMFUSE_KERNELS=neon but this build is not aarch64");
        }
        return b;
    }
    if (choice == "auto" || choice.empty()) {
        if (const Backend* b = avx2_backend()) {
            return b;
        }
        if (const Backend* b = neon_backend()) {
            return b;
        }
        return &scalar_backend();
    }
    throw ConfigError("unknown MMFUSE_KERNELS value '" + choice + "' (auto|scalar|avx2|neon)");
}

const Backend*& active_slot() {
    static const Backend* slot = resolve_from_env();
    return slot;
}

}  // namespace

const Backend& active() {
    return *active_slot();
}

void set_active(const Backend& b) {
    active_slot() = &b;
}

}  // namespace mmfuse::kernels
