#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "acceptance.hpp"

int main(int argc, char** argv) {
  CLI::App app{"acceptance gate for the part-prototype classifier"};
  int criterion = 0;
  std::string work = "acceptance_work";
  app.add_option("--criterion", criterion, "criterion number, 0 runs all")
      ->check(CLI::Range(0, acceptance::kCriterionCount));
  app.add_option("--work", work, "cache directory for desk-scale artifacts");
  CLI11_PARSE(app, argc, argv);

  int failures = 0;
  const int lo = criterion == 0 ? 1 : criterion;
  const int hi = criterion == 0 ? acceptance::kCriterionCount : criterion;
  for (int n = lo; n <= hi; ++n) {
    acceptance::CriterionResult r;
    try {
      r = acceptance::run_criterion(n, work);
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    std::printf("criterion %d: %s (%s)\n", n, r.pass ? "PASS" : "FAIL", r.detail.c_str());
    std::fflush(stdout);
    if (!r.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
