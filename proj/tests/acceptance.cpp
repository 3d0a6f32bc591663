// One line per acceptance criterion: "criterion N: PASS|FAIL <detail>".
// Usage: acceptance [--only N]... [--verbose]

#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "support/criteria.hpp"

#ifndef TICTAC_DATA_DIR
#define TICTAC_DATA_DIR "data"
#endif

int main(int argc, char** argv) {
  std::set<int> only;
  bool verbose = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      only.insert(std::atoi(argv[++i]));
    } else if (a == "--verbose") {
      verbose = true;
    } else {
      std::cerr << "usage: acceptance [--only N]... [--verbose]\n";
      return 1;
    }
  }
  std::ostream* log = verbose ? &std::cerr : nullptr;
  const std::string data = TICTAC_DATA_DIR;

  const std::vector<std::function<criteria::Verdict()>> checks = {
      [] { return criteria::derivatives(50); },
      [] { return criteria::taylor_moments(100000); },
      [] { return criteria::tic_pd(1000); },
      [] { return criteria::tac_oracle(200); },
      [] { return criteria::loss_gradients(100); },
      [] { return criteria::univariate(10000, 100); },
      [log] { return criteria::multivariate({4, 8, 12}, 3, log); },
      [log, data] {
        return criteria::uci({data + "/uci/winequality-red.csv", data + "/uci/housing.csv"}, 3, log);
      },
      [] { return criteria::determinism(); },
  };

  bool all = true;
  for (std::size_t k = 0; k < checks.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    criteria::Verdict v;
    try {
      v = checks[k]();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all = all && v.pass;
    std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << ' ' << v.detail << std::endl;
  }
  return all ? 0 : 1;
}
