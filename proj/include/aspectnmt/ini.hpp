#pragma once

#include <string>
#include <vector>

namespace aspectnmt {

// INI-like config text: [section] headers, `key = value` lines, `#` comments,
// UTF-8. Keys may repeat within a section (grammar rule lists rely on this);
// consumers that require unique keys enforce that themselves.
struct IniEntry {
    std::string section;
    std::string key;
    std::string value;
    int line; // 1-based, for error messages
};

struct IniFile {
    std::string source; // file name or label, used in error messages
    std::vector<IniEntry> entries;
    std::vector<std::string> sections; // in first-appearance order

    bool has_section(const std::string& s) const;
    // entries of one section, file order
    std::vector<const IniEntry*> section_entries(const std::string& s) const;
    // single-valued lookup; returns nullptr if absent, errors if repeated
    const IniEntry* find_one(const std::string& section, const std::string& key) const;
};

IniFile parse_ini(const std::string& text, const std::string& source_name);
IniFile load_ini(const std::string& path);

std::string trim(const std::string& s);

} // namespace aspectnmt
