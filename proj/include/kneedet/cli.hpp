#pragma once

#include <string>
#include <vector>

namespace kneedet {

// Entry point behind the kneedet binary; args exclude the program name.
// Exit codes: 0 success, 1 usage error, 2 data/parse error, 3 numeric
// fault.
int run_cli(std::vector<std::string> args);

}  // namespace kneedet
