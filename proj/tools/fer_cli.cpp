#include <iostream>

int main() {
  std::cout << "fer: subcommands pending\n";
  return 0;
}
