#include <string>
#include <vector>

#include "bisida/cli.hpp"

int main(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return bisida::run_command(args);
}
