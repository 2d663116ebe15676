#include <cstdio>
int main(){ std::puts("meddcr cli placeholder"); return 0; }
