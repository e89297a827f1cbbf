// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "arlab/core/alloc.hpp"

int main(int argc, char** argv) {
  arlab::tune_allocator();
  testing::InitGoogleTest(&argc, argv);
  return RUN_ALL_TESTS();
}
