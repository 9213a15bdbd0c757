#include <cstdio>

int main() {
  std::puts("headliner: placeholder");
  return 0;
}
