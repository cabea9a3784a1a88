#include "rapkit/util/parallel.hpp"

#include <algorithm>

namespace rapkit {

namespace {
std::atomic<int> g_workers{0};  // 0 = auto
}

int worker_count() {
  const int w = g_workers.load();
  if (w > 0) return w;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void set_worker_count(int n) { g_workers.store(std::max(0, n)); }

}  // namespace rapkit
