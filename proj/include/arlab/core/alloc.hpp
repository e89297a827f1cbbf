// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <malloc.h>

namespace arlab {

/// Keep freed tensor buffers in the heap. With glibc defaults every buffer
/// above 128 KiB goes through mmap/munmap, and tape-heavy loops end up
/// spending as much time in page faults as in arithmetic.
inline void tune_allocator() {
#ifdef M_MMAP_THRESHOLD
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace arlab
