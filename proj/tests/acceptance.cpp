// Runs every acceptance criterion at its tolerance and runtime limit; exits
// nonzero when any criterion fails.
#include "suite.hpp"

#include <cstdio>
#include <cstdlib>
#include <string>

int main(int argc, char** argv) {
  svie::suite::SuiteOptions opt;
  for (int i = 1; i < argc; ++i) opt.only.push_back(std::atoi(argv[i]));
  int failed = 0;
  const auto results = svie::suite::run_suite(opt, [&failed](const svie::suite::CriterionResult& r) {
    std::printf("%s\n", svie::suite::format_line(r).c_str());
    std::fflush(stdout);
    failed += !r.passed();
  });
  std::printf("%zu criteria, %d failed\n", results.size(), failed);
  return failed == 0 ? 0 : 1;
}
