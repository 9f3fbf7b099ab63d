#pragma once

#include <stdexcept>
#include <string>

namespace aspectnmt {

// Error categories map 1:1 onto CLI exit codes (sysexits-style) and onto the
// machine-parsable prefix printed on stderr: "error[<category>]: <message>".
enum class ErrorCategory {
    Usage,       // bad flags / unknown subcommand
    DataFormat,  // malformed corpus, vocab, or checkpoint contents
    MissingFile, // a referenced path does not exist
    Io,          // read/write failure on an existing path
    Config,      // config violation (unknown key, invariant breach)
    Internal,    // should-not-happen
};

const char* category_name(ErrorCategory c);
int category_exit_code(ErrorCategory c);

class Error : public std::runtime_error {
public:
    Error(ErrorCategory cat, const std::string& msg)
        : std::runtime_error(msg), category(cat) {}
    ErrorCategory category;
};

[[noreturn]] inline void fail(ErrorCategory cat, const std::string& msg) {
    throw Error(cat, msg);
}

} // namespace aspectnmt
