#include <string>
#include <vector>

#include "bdsdep/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return bdsdep::cli::run(args);
}
