#include <cstdio>
int main() { std::puts("lvnet"); return 0; }
