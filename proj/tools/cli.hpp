#pragma once

#include <map>
#include <string>
#include <vector>

#include "fabseg/config.hpp"

namespace fabseg::cli {

/// A parsed invocation. `config` holds the file named by --config (or the
/// built-in defaults) with every command-line override already applied.
struct Command {
    std::string name;
    std::map<std::string, std::string> options;  // long option name -> value ("true" for switches)
    std::string config_path;
    PipelineConfig config;
    bool help = false;
    std::string usage;

    bool has(const std::string& key) const { return options.count(key) > 0; }
    /// Value of a required option; UsageError when absent.
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
};

/// argv without the program name. Unknown commands or options raise
/// UsageError naming the offending token; `--help` yields a Command with
/// `help` set and the usage text filled in.
Command parse_args(const std::vector<std::string>& args);

/// Dispatches a parsed command. Returns 0 on success; errors are reported on
/// stderr by name and turned into a non-zero exit code.
int run(const Command& cmd);

/// parse_args + run with the same error handling; what `main` calls.
int main_entry(const std::vector<std::string>& args);

}  // namespace fabseg::cli
