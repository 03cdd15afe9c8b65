#pragma once

#include <string>
#include <vector>

namespace splat::checks {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0;
};

std::vector<std::string> check_names();
CheckResult run_check(const std::string& name);
std::vector<CheckResult> run_all();

}  // namespace splat::checks
