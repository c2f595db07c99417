#include <cstdlib>
#include <string>

#include "refi/kernels.hpp"
#include "refi/log.hpp"

namespace refi::kernels {

const Table* avx2_table_impl();  // null when not compiled in
const Table* neon_table_impl();

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const Table* runnable(const char* name) {
  if (std::string(name) == "avx2" && cpu_has_avx2()) return avx2_table_impl();
  if (std::string(name) == "neon") return neon_table_impl();  // baseline on aarch64
  return nullptr;
}

const Table* select() {
  if (const char* env = std::getenv("REFI_KERNELS")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "auto" || want.empty()) {
      // fall through to auto
    } else if (const Table* t = runnable(want.c_str())) {
      return t;
    } else {
      log::warn("REFI_KERNELS value unavailable, using scalar", {{"requested", want}});
      return &scalar_table();
    }
  }
  if (const Table* t = runnable("avx2")) return t;
  if (const Table* t = runnable("neon")) return t;
  return &scalar_table();
}

}  // namespace

const Table& active() {
  static const Table* t = select();
  return *t;
}

std::vector<const Table*> available_tables() {
  std::vector<const Table*> out{&scalar_table()};
  if (const Table* t = runnable("avx2")) out.push_back(t);
  if (const Table* t = runnable("neon")) out.push_back(t);
  return out;
}

}  // namespace refi::kernels
