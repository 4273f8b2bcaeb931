#pragma once

namespace dunet::cli {

/// Entry point of the dunet tool. Returns 0 on success, 2 for a malformed
/// config or command line, 1 for any other failure.
int run(int argc, char** argv);

}  // namespace dunet::cli
