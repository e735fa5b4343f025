#include <cstdio>
int main(){ std::puts("cli lands later"); return 0; }
