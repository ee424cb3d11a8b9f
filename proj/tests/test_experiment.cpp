#include <gtest/gtest.h>

TEST(Placeholder, experiment) { SUCCEED(); }
