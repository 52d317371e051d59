#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "oversense/errors.hpp"
#include "oversense/util.hpp"

using namespace oversense;

TEST_CASE("format_double round-trips exact bit patterns") {
    const double samples[] = {0.0,         1.0,       -1.0,     0.1,
                              1.0 / 3.0,   1e-308,    1e308,    3.141592653589793,
                              -2.2250738585072014e-308, 0.05,   123456.789};
    for (double v : samples) {
        std::string s = format_double(v);
        CHECK(std::strtod(s.c_str(), nullptr) == v);
    }
}

TEST_CASE("Rng produces identical streams for identical seeds") {
    Rng a(123);
    Rng b(123);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.uniform01() == b.uniform01());
    }
    Rng c(124);
    bool all_equal = true;
    Rng a2(123);
    for (int i = 0; i < 10; ++i) {
        all_equal = all_equal && (a2.uniform01() == c.uniform01());
    }
    CHECK_FALSE(all_equal);
}

TEST_CASE("Rng uniform01 stays in [0, 1) and below(n) in range") {
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        double u = rng.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(rng.below(17) < 17);
    }
}

TEST_CASE("Rng shuffle is a permutation and seed-stable") {
    std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8};
    Rng a(42);
    a.shuffle(v);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8});

    std::vector<int> w{1, 2, 3, 4, 5, 6, 7, 8};
    Rng b(42);
    b.shuffle(w);
    CHECK(v == w);
}

TEST_CASE("fnv1a distinguishes nearby strings and is stable") {
    CHECK(fnv1a("") == 14695981039346656037ULL);
    CHECK(fnv1a("a") != fnv1a("b"));
    CHECK(fnv1a("abc") == fnv1a("abc"));
    CHECK(fnv1a("abc", 1) != fnv1a("abc", 2));
}

TEST_CASE("split_lines handles trailing newline and CRLF") {
    CHECK(split_lines("a\nb\n") == std::vector<std::string>{"a", "b"});
    CHECK(split_lines("a\nb") == std::vector<std::string>{"a", "b"});
    CHECK(split_lines("a\r\nb\r\n") == std::vector<std::string>{"a", "b"});
    CHECK(split_lines("") == std::vector<std::string>{});
    CHECK(split_lines("\n") == std::vector<std::string>{""});
}

TEST_CASE("atomic_write creates directories and leaves no temp file") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "oversense_util_test";
    fs::remove_all(dir);
    fs::path target = dir / "nested" / "out.txt";
    atomic_write(target, "payload");
    CHECK(read_file(target) == "payload");
    CHECK_FALSE(fs::exists(target.string() + ".tmp"));
    atomic_write(target, "replaced");
    CHECK(read_file(target) == "replaced");
    fs::remove_all(dir);
}

TEST_CASE("read_file reports unreadable paths") {
    CHECK_THROWS_AS(read_file("/nonexistent/oversense/file.txt"), ConfigError);
}

TEST_CASE("ascii_lower touches only ASCII letters") {
    CHECK(ascii_lower("MiXeD 123") == "mixed 123");
    CHECK(ascii_lower("caf\xc3\x89") == "caf\xc3\x89");  // UTF-8 E acute untouched
}
