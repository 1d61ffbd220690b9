#include <cstdio>

int main() {
  std::puts("btdfuse: subcommands not wired up yet");
  return 1;
}
