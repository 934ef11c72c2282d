#include "hmexpr/cli.hpp"

int main(int argc, char** argv) { return hmexpr::run_command(argc, argv); }
