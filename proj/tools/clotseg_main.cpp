#include "clotseg/cli.hpp"

int main(int argc, char** argv) { return clotseg::dispatch(argc, argv); }
