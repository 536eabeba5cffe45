#include "meshforge/cli.hpp"

int main(int argc, char** argv) { return meshforge::dispatch(argc, argv); }
