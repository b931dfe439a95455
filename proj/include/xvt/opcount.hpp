#pragma once

#include <cstdint>

namespace xvt::opcount {

// Multiply-accumulate counter for the matrix-product kernels. Used by tests
// that assert the token path does asymptotically less key-side work than the
// pixel path.
inline thread_local std::uint64_t g_macs = 0;

inline void reset() { g_macs = 0; }
inline std::uint64_t macs() { return g_macs; }
inline void add_macs(std::uint64_t n) { g_macs += n; }

}  // namespace xvt::opcount
