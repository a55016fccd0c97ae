#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "helpers.hpp"
TEST_CASE("placeholder") { CHECK(true); }
