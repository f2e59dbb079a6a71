#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "anynet/common.hpp"

int main(int argc, char** argv) {
  anynet::set_debug_checks(true);
  return doctest::Context(argc, argv).run();
}
