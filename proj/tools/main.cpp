#include <string>
#include <vector>

#include "oversense/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return oversense::run_cli(args);
}
