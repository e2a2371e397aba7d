#ifndef CURE_CLI_HPP
#define CURE_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace cure {

/// Entry point of cure-forge. `args` excludes the program name. Returns the
/// process exit code; failures print one JSON line to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace cure

#endif // CURE_CLI_HPP
