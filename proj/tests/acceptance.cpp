// Acceptance suite: one pass/fail line per criterion. Placeholder.
#include <iostream>

int main() {
  std::cout << "acceptance suite not yet implemented\n";
  return 1;
}
