#include <gtest/gtest.h>
#include "feat/config.hpp"
#include "feat/gradcheck.hpp"
#include "feat/io/model_io.hpp"
#include "feat/io/plot.hpp"
#include "feat/metrics.hpp"
TEST(Smoke, Builds) { SUCCEED(); }
