#include "aspectnmt/ini.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "aspectnmt/errors.hpp"

namespace aspectnmt {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool IniFile::has_section(const std::string& s) const {
    return std::find(sections.begin(), sections.end(), s) != sections.end();
}

std::vector<const IniEntry*> IniFile::section_entries(const std::string& s) const {
    std::vector<const IniEntry*> out;
    for (const auto& e : entries)
        if (e.section == s) out.push_back(&e);
    return out;
}

const IniEntry* IniFile::find_one(const std::string& section, const std::string& key) const {
    const IniEntry* found = nullptr;
    for (const auto& e : entries) {
        if (e.section == section && e.key == key) {
            if (found)
                fail(ErrorCategory::Config,
                     "duplicate key '" + key + "' in section [" + section + "]");
            found = &e;
        }
    }
    return found;
}

IniFile parse_ini(const std::string& text, const std::string& source_name) {
    IniFile out;
    out.source = source_name;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        // A '#' preceded by whitespace starts a trailing comment; an embedded
        // '#' (as in a token like "a#b") is kept.
        for (std::size_t i = 1; i < t.size(); ++i) {
            if (t[i] == '#' && (t[i - 1] == ' ' || t[i - 1] == '\t')) {
                t = trim(t.substr(0, i));
                break;
            }
        }
        if (t.front() == '[') {
            if (t.back() != ']')
                fail(ErrorCategory::Config, source_name + ":" + std::to_string(lineno) +
                                                ": unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty())
                fail(ErrorCategory::Config,
                     source_name + ":" + std::to_string(lineno) + ": empty section name");
            if (!out.has_section(section)) out.sections.push_back(section);
            continue;
        }
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            fail(ErrorCategory::Config, source_name + ":" + std::to_string(lineno) +
                                            ": expected 'key = value', got '" + t + "'");
        if (section.empty())
            fail(ErrorCategory::Config, source_name + ":" + std::to_string(lineno) +
                                            ": key outside of any [section]");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            fail(ErrorCategory::Config,
                 source_name + ":" + std::to_string(lineno) + ": empty key");
        out.entries.push_back({section, key, value, lineno});
    }
    return out;
}

IniFile load_ini(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCategory::MissingFile, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_ini(ss.str(), path);
}

} // namespace aspectnmt
