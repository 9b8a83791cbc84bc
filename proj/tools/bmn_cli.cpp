#include <string>
#include <vector>

#include "bmn/cli.hpp"

int main(int argc, char** argv) { return bmn::cli::run(std::vector<std::string>(argv, argv + argc)); }
