#include "fwrl/common.hpp"
#include "fwrl/keyvalue.hpp"

#include <doctest.h>

#include <filesystem>

using namespace fwrl;

TEST_CASE("wrap_angle maps into (-pi, pi]") {
    CHECK(wrap_angle(0.0) == 0.0);
    CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
    CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
    CHECK(wrap_angle(3 * kPi / 2) == doctest::Approx(-kPi / 2));
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const double a = rng.uniform(-50.0, 50.0);
        const double w = wrap_angle(a);
        CHECK(w > -kPi);
        CHECK(w <= kPi);
        CHECK(std::remainder(a - w, 2 * kPi) == doctest::Approx(0.0).epsilon(1e-9));
    }
}

TEST_CASE("Rng streams are reproducible and split streams differ") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(42);
    Rng d = c.split();
    CHECK(c.next_u64() != d.next_u64());
    Rng e(1), f(2);
    CHECK(e.next_u64() != f.next_u64());
}

TEST_CASE("fnv1a matches published test vectors") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("format_double round-trips") {
    Rng rng(9);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.normal() * std::pow(10.0, rng.uniform(-20, 20));
        CHECK(std::stod(format_double(v)) == v);
    }
    CHECK(format_double(0.1) == "0.1");
}

TEST_CASE("KeyValueFile parses, keeps order and round-trips") {
    const auto kv = KeyValueFile::parse("schema = x/1\n# comment line\n b = 2.5  # unit\na=hello world\n");
    CHECK(kv.get_string("schema") == "x/1");
    CHECK(kv.get_double("b") == 2.5);
    CHECK(kv.get_string("a") == "hello world");
    CHECK(kv.entries()[1].key == "b");
    CHECK(kv.entries()[1].comment == "unit");
    CHECK(kv.get_int("missing", 7) == 7);
    CHECK_THROWS_AS(kv.get_double("a"), ConfigError);
    CHECK_THROWS_AS(kv.get_double("missing"), ConfigError);
    CHECK_THROWS_AS(KeyValueFile::parse("novalue\n"), ConfigError);
    CHECK_NOTHROW(kv.require_schema("x/1"));
    CHECK_THROWS_AS(kv.require_schema("y/1"), ConfigError);

    const auto again = KeyValueFile::parse(kv.serialize());
    CHECK(again.serialize() == kv.serialize());

    KeyValueFile w;
    w.set("flag", true);
    w.set("n", 3);
    w.set("x", 1.0 / 3.0);
    const auto r = KeyValueFile::parse(w.serialize());
    CHECK(r.get_bool("flag"));
    CHECK(r.get_int("n") == 3);
    CHECK(r.get_double("x") == 1.0 / 3.0);
}
