#include "aspectnmt/errors.hpp"

namespace aspectnmt {

const char* category_name(ErrorCategory c) {
    switch (c) {
    case ErrorCategory::Usage: return "usage";
    case ErrorCategory::DataFormat: return "data-format";
    case ErrorCategory::MissingFile: return "missing-file";
    case ErrorCategory::Io: return "io";
    case ErrorCategory::Config: return "config";
    case ErrorCategory::Internal: return "internal";
    }
    return "internal";
}

int category_exit_code(ErrorCategory c) {
    switch (c) {
    case ErrorCategory::Usage: return 64;
    case ErrorCategory::DataFormat: return 65;
    case ErrorCategory::MissingFile: return 66;
    case ErrorCategory::Io: return 74;
    case ErrorCategory::Config: return 78;
    case ErrorCategory::Internal: return 70;
    }
    return 70;
}

} // namespace aspectnmt
