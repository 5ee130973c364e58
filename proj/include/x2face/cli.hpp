#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace x2face {

// Exit codes: 0 success, 1 domain error ("<code> <message>" on stderr),
// 2 usage error (unknown subcommand/flag, missing required flag).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace x2face
