#include "aspectnmt/serialize.hpp"

#include <cstring>
#include <fstream>

#include "aspectnmt/errors.hpp"

namespace aspectnmt {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;
    std::string src;

    void need(std::size_t n) const {
        if (pos + n > buf.size())
            fail(ErrorCategory::DataFormat, src + ": truncated checkpoint");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

} // namespace

void Checkpoint::put(const std::string& name, const Mat& value) {
    auto it = params_.find(name);
    if (it == params_.end()) order_.push_back(name);
    params_[name] = value;
}

const Mat& Checkpoint::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end())
        fail(ErrorCategory::DataFormat, "checkpoint has no parameter '" + name + "'");
    return it->second;
}

bool Checkpoint::has(const std::string& name) const { return params_.count(name) > 0; }

std::vector<std::uint8_t> Checkpoint::to_bytes() const {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'A', 'S', 'P', 'C'});
    put_u32(out, kVersion);
    put_u64(out, config_echo.size());
    out.insert(out.end(), config_echo.begin(), config_echo.end());
    put_u32(out, static_cast<std::uint32_t>(order_.size()));
    for (const auto& name : order_) {
        const Mat& m = params_.at(name);
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        // rank is always 2; 1-D values travel as n x 1 so orientation survives
        put_u32(out, 2);
        put_u32(out, static_cast<std::uint32_t>(m.rows()));
        put_u32(out, static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                float f = static_cast<float>(m(r, c));
                std::uint32_t bits;
                std::memcpy(&bits, &f, 4);
                put_u32(out, bits);
            }
    }
    return out;
}

Checkpoint Checkpoint::from_bytes(const std::vector<std::uint8_t>& bytes,
                                  const std::string& source_name) {
    Reader r{bytes, 0, source_name};
    if (r.bytes(4) != "ASPC")
        fail(ErrorCategory::DataFormat, source_name + ": bad magic, not an ASPC checkpoint");
    std::uint32_t version = r.u32();
    if (version != kVersion)
        fail(ErrorCategory::DataFormat,
             source_name + ": unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    std::uint64_t cfg_len = r.u64();
    ck.config_echo = r.bytes(cfg_len);
    std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.bytes(r.u32());
        std::uint32_t rank = r.u32();
        if (rank != 1 && rank != 2)
            fail(ErrorCategory::DataFormat,
                 source_name + ": parameter '" + name + "' has rank " + std::to_string(rank));
        std::uint32_t rows, cols;
        if (rank == 1) {
            rows = r.u32();
            cols = 1;
        } else {
            rows = r.u32();
            cols = r.u32();
        }
        Mat m(rows, cols);
        for (std::uint32_t rr = 0; rr < rows; ++rr)
            for (std::uint32_t cc = 0; cc < cols; ++cc) {
                std::uint32_t bits = r.u32();
                float f;
                std::memcpy(&f, &bits, 4);
                m(rr, cc) = f;
            }
        ck.put(name, m);
    }
    if (r.pos != bytes.size())
        fail(ErrorCategory::DataFormat, source_name + ": trailing bytes after checkpoint");
    return ck;
}

void Checkpoint::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCategory::Io, "cannot write '" + path + "'");
    auto bytes = to_bytes();
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCategory::Io, "short write on '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCategory::MissingFile, "cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return from_bytes(bytes, path);
}

} // namespace aspectnmt
