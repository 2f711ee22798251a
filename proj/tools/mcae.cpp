#include <string>
#include <vector>

#include "mcae/cli.hpp"

int main(int argc, char** argv) {
    return mcae::cli::dispatch(std::vector<std::string>(argv + 1, argv + argc));
}
