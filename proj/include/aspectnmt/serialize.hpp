#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace aspectnmt {

using Mat = Eigen::MatrixXd;

// Checkpoint container used by every trainable module.
//
// Layout (little-endian throughout):
//   magic "ASPC" | u32 format version | u64 config length | config bytes (UTF-8)
//   u32 parameter count, then per parameter:
//     u32 name length | name bytes | u32 rank | u32 dims[rank] |
//     row-major IEEE-754 binary32 payload
//
// Parameters keep insertion order so a checkpoint written twice from the
// same state is byte-identical.
class Checkpoint {
public:
    static constexpr std::uint32_t kVersion = 1;

    std::string config_echo; // canonical text of the producing config

    void put(const std::string& name, const Mat& value);
    const Mat& get(const std::string& name) const;
    bool has(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }

    std::vector<std::uint8_t> to_bytes() const;
    static Checkpoint from_bytes(const std::vector<std::uint8_t>& bytes,
                                 const std::string& source_name = "checkpoint");

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

private:
    std::vector<std::string> order_;
    std::map<std::string, Mat> params_;
};

} // namespace aspectnmt
