#include <cstdio>

int main() {
  std::puts("coedge: subcommands pending");
  return 0;
}
