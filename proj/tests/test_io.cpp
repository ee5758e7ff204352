#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "daer/error.hpp"
#include "daer/io.hpp"

using namespace daer;
using namespace daer::io;

TEST_CASE("little-endian primitives round-trip through Reader") {
    std::vector<std::uint8_t> buf;
    put_u8(buf, 0xab);
    put_u32(buf, 0xdeadbeefu);
    put_u64(buf, 0x0123456789abcdefULL);
    put_f32(buf, 1.5f);
    put_f64(buf, -2.25);
    CHECK(buf.size() == 1 + 4 + 8 + 4 + 8);

    // Explicit little-endian layout of the u32.
    CHECK(buf[1] == 0xef);
    CHECK(buf[2] == 0xbe);
    CHECK(buf[3] == 0xad);
    CHECK(buf[4] == 0xde);

    Reader r(buf.data(), buf.size(), "test blob");
    CHECK(r.u8() == 0xab);
    CHECK(r.u32() == 0xdeadbeefu);
    CHECK(r.u64() == 0x0123456789abcdefULL);
    CHECK(r.f32() == 1.5f);
    CHECK(r.f64() == -2.25);
    CHECK(r.done());
    CHECK(r.remaining() == 0);
}

TEST_CASE("Reader throws decode_error on truncation") {
    std::vector<std::uint8_t> buf;
    put_u32(buf, 7);
    Reader r(buf.data(), buf.size(), "short blob");
    CHECK(r.u32() == 7);
    CHECK_THROWS_AS(r.u8(), decode_error);

    Reader r2(buf.data(), 3, "shorter blob");
    CHECK_THROWS_AS(r2.u32(), decode_error);

    Reader r3(buf.data(), buf.size(), "span blob");
    CHECK(r3.bytes(4).size() == 4);
    CHECK_THROWS_AS(r3.bytes(1), decode_error);
}

TEST_CASE("parse_kv_text handles comments, blanks, and whitespace") {
    const std::string text =
        "# full-line comment\n"
        "alpha = 0.5\n"
        "\n"
        "  name =  spaced value  \n"
        "flag=true # trailing comment\n"
        "empty_value =\n";
    const auto kv = parse_kv_text(text);
    CHECK(kv.size() == 4);
    CHECK(kv.at("alpha") == "0.5");
    CHECK(kv.at("name") == "spaced value");
    CHECK(kv.at("flag") == "true");
    CHECK(kv.at("empty_value") == "");
}

TEST_CASE("parse_kv_text rejects malformed lines") {
    CHECK_THROWS_AS(parse_kv_text("no equals sign\n"), config_error);
    CHECK_THROWS_AS(parse_kv_text("= value without key\n"), config_error);
    // Later assignments win.
    const auto kv = parse_kv_text("a = 1\na = 2\n");
    CHECK(kv.at("a") == "2");
}

TEST_CASE("KvReader parses typed values with fallbacks") {
    KvReader kv(parse_kv_text("count = 42\nrate = 0.25\nflag = yes\nname = run7\nneg = -3\n"));
    CHECK(kv.get_u64("count", 0) == 42);
    CHECK(kv.get_double("rate", 1.0) == doctest::Approx(0.25));
    CHECK(kv.get_bool("flag", false));
    CHECK(kv.get_string("name", "") == "run7");
    CHECK(kv.get_double("neg", 0.0) == doctest::Approx(-3.0));

    CHECK(kv.get_u64("missing", 9) == 9);
    CHECK(kv.get_double("missing2", 0.5) == doctest::Approx(0.5));
    CHECK(kv.get_bool("missing3", true));
    CHECK(kv.get_string("missing4", "dflt") == "dflt");
}

TEST_CASE("KvReader rejects values of the wrong type") {
    KvReader kv(parse_kv_text("count = 4x\nrate = abc\nflag = maybe\nneg = -3\n"));
    CHECK_THROWS_AS(kv.get_u64("count", 0), config_error);
    CHECK_THROWS_AS(kv.get_double("rate", 0.0), config_error);
    CHECK_THROWS_AS(kv.get_bool("flag", false), config_error);
    CHECK_THROWS_AS(kv.get_u64("neg", 0), config_error);
}

TEST_CASE("KvReader finish rejects keys never consumed") {
    KvReader kv(parse_kv_text("known = 1\nmystery = 2\n"));
    CHECK(kv.get_u64("known", 0) == 1);
    CHECK_THROWS_AS(kv.finish(), config_error);

    KvReader ok(parse_kv_text("a = 1\nb = 2\n"));
    ok.get_u64("a", 0);
    ok.get_u64("b", 0);
    CHECK_NOTHROW(ok.finish());

    // Consuming via fallback still counts as consumption.
    KvReader fb(parse_kv_text("c = 3\n"));
    fb.get_u64("c", 0);
    fb.get_u64("d", 7);
    CHECK_NOTHROW(fb.finish());
}

TEST_CASE("atomic writes leave no temp file and are readable back") {
    const std::string path = "test_io_atomic.bin";
    const std::vector<std::uint8_t> payload = {1, 2, 3, 4, 5};
    write_file_atomic(path, payload);
    CHECK(read_file(path) == payload);
    // The temp staging file is renamed away.
    std::ifstream tmp(path + ".tmp");
    CHECK_FALSE(tmp.good());

    // Overwrite with different content; reader sees the new bytes.
    const std::vector<std::uint8_t> second = {9, 8};
    write_file_atomic(path, second);
    CHECK(read_file(path) == second);
    std::remove(path.c_str());

    const std::string text_path = "test_io_atomic.txt";
    write_text_atomic(text_path, "hello\n");
    const auto bytes = read_file(text_path);
    CHECK(std::string(bytes.begin(), bytes.end()) == "hello\n");
    std::remove(text_path.c_str());
}

TEST_CASE("read_file reports missing files as io_error") {
    CHECK_THROWS_AS(read_file("definitely_missing_file.bin"), io_error);
}

TEST_CASE("load_kv_file reads what write_text_atomic wrote") {
    const std::string path = "test_io_kv.cfg";
    write_text_atomic(path, "alpha = 0.5\nbeta = 2\n");
    const auto kv = load_kv_file(path);
    CHECK(kv.at("alpha") == "0.5");
    CHECK(kv.at("beta") == "2");
    std::remove(path.c_str());
}
