#include <iostream>

#include "maskdef/defense.hpp"
#include "maskdef/mlm.hpp"

int main() {
  const maskdef::TableMlm mlm({"cat", "dog"}, {});
  const auto ranked = maskdef::rank_importance(maskdef::tokenize("cat dog"), mlm);
  std::cout << ranked.size() << "\n";
  return ranked.size() == 2 ? 0 : 1;
}
