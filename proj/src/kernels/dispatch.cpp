#include <atomic>
#include <cstdlib>
#include <string_view>

#include "transsleep/kernels.hpp"

namespace transsleep::kernels {
namespace {

const KernelTable* detect() {
  if (const char* env = std::getenv("TRANSSLEEP_KERNELS")) {
    if (std::string_view(env) == "scalar") return &scalar_table();
  }
  if (const KernelTable* t = avx2_table()) return t;
  if (const KernelTable* t = neon_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*> g_active{nullptr};

}  // namespace

const KernelTable& active() {
  const KernelTable* t = g_active.load(std::memory_order_acquire);
  if (t == nullptr) {
    t = detect();
    g_active.store(t, std::memory_order_release);
  }
  return *t;
}

void set_active(const KernelTable* table) {
  g_active.store(table != nullptr ? table : detect(), std::memory_order_release);
}

}  // namespace transsleep::kernels
