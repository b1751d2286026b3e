#include <string>
#include <vector>

#include "flowinfer/workflow.hpp"

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv + 1, argv + argc);
    return flowinfer::run_command(args);
}
