#include "stlmm/commands.hpp"

int main(int argc, char** argv) { return stlmm::run_cli(argc, argv); }
