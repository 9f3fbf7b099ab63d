#include <cstdio>
#include <string>

#include "doctest.h"

#include "aspectnmt/errors.hpp"
#include "aspectnmt/serialize.hpp"

using namespace aspectnmt;

namespace {
Checkpoint sample() {
    Checkpoint ck;
    ck.config_echo = "[nmt]\nd_model = 64\n";
    Mat w(2, 3);
    w << 1.5, -2.25, 0.0, 4.0, 5.0, -6.5;
    ck.put("enc.w", w);
    Mat b(3, 1);
    b << 0.5, 0.25, -0.125;
    ck.put("enc.b", b);
    return ck;
}
} // namespace

TEST_CASE("checkpoint round-trips values, shapes, names, and config echo") {
    Checkpoint ck = sample();
    auto bytes = ck.to_bytes();
    Checkpoint back = Checkpoint::from_bytes(bytes);
    CHECK(back.config_echo == ck.config_echo);
    REQUIRE(back.names() == std::vector<std::string>{"enc.w", "enc.b"});
    CHECK(back.get("enc.w").rows() == 2);
    CHECK(back.get("enc.w").cols() == 3);
    CHECK(back.get("enc.w")(1, 2) == -6.5);
    CHECK(back.get("enc.b").rows() == 3);
    CHECK(back.get("enc.b").cols() == 1);
    CHECK(back.get("enc.b")(2, 0) == -0.125);
}

TEST_CASE("checkpoint serialization is byte-stable") {
    // Values that are exactly representable in float32 must survive a
    // round trip bit-for-bit, and re-serialization must be byte-identical.
    Checkpoint ck = sample();
    auto bytes1 = ck.to_bytes();
    auto bytes2 = Checkpoint::from_bytes(bytes1).to_bytes();
    CHECK(bytes1 == bytes2);
}

TEST_CASE("checkpoint save/load round-trips through a file") {
    Checkpoint ck = sample();
    std::string path = "ck_roundtrip.tmp";
    ck.save(path);
    Checkpoint back = Checkpoint::load(path);
    CHECK(back.to_bytes() == ck.to_bytes());
    std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects corrupt input") {
    Checkpoint ck = sample();
    auto bytes = ck.to_bytes();

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(Checkpoint::from_bytes(bad_magic), Error);

    auto truncated = bytes;
    truncated.resize(truncated.size() - 3);
    CHECK_THROWS_AS(Checkpoint::from_bytes(truncated), Error);

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(Checkpoint::from_bytes(trailing), Error);
}

TEST_CASE("checkpoint get names missing parameter") {
    Checkpoint ck = sample();
    CHECK_THROWS_WITH_AS(ck.get("nope"), doctest::Contains("nope"), Error);
    CHECK(ck.has("enc.w"));
    CHECK_FALSE(ck.has("nope"));
}

TEST_CASE("missing checkpoint file reports missing-file") {
    try {
        Checkpoint::load("/nonexistent/ck.bin");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.category == ErrorCategory::MissingFile);
    }
}
