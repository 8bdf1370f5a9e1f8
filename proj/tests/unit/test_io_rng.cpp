#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "../support/oracles.hpp"
#include "rprobe/error.hpp"
#include "rprobe/io.hpp"
#include "rprobe/rng.hpp"

using namespace rprobe;
using rprobe::testing::TempDir;

TEST(Rng, DeriveSeedSeparatesKeysAndSalts) {
    EXPECT_EQ(derive_seed(42, "a", 1), derive_seed(42, "a", 1));
    EXPECT_NE(derive_seed(42, "a", 1), derive_seed(42, "a", 2));
    EXPECT_NE(derive_seed(42, "a", 1), derive_seed(42, "b", 1));
    EXPECT_NE(derive_seed(42, "a", 1), derive_seed(43, "a", 1));
}

TEST(Rng, Fnv1aKnownValues) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Rng, UniformIndexCoversRangeEvenly) {
    Rng rng(9);
    std::vector<int> counts(7, 0);
    const int draws = 70000;
    for (int i = 0; i < draws; ++i) ++counts[uniform_index(rng, 7)];
    for (int c : counts) EXPECT_NEAR(c, draws / 7, 400);
}

TEST(Rng, StandardNormalMoments) {
    Rng rng(10);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = standard_normal(rng);
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutationAndReproducible) {
    std::vector<int> a(50), b;
    for (int i = 0; i < 50; ++i) a[i] = i;
    b = a;
    Rng r1(5), r2(5);
    shuffle(std::span<int>(a), r1);
    shuffle(std::span<int>(b), r2);
    EXPECT_EQ(a, b);
    std::vector<int> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Io, CsvRoundTripWithQuoting) {
    TempDir dir;
    const std::vector<std::string> header{"a", "b", "c"};
    const std::vector<std::string> row{"plain", "with,comma", "quote\"and\nnewline"};
    io::write_file_atomic(dir / "t.csv", io::csv_line(header) + io::csv_line(row));
    const io::CsvTable t = io::read_csv(dir / "t.csv");
    EXPECT_EQ(t.header, header);
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_EQ(t.rows[0], row);
    EXPECT_EQ(t.column("c"), 2u);
    EXPECT_THROW(t.column("missing"), ParseError);
}

TEST(Io, FormatDoubleRoundTrips) {
    for (double v : {0.0, 1.0, 0.1, 1.0 / 3.0, 1e-300, 123456.789, -2.5e-7}) {
        EXPECT_EQ(std::stod(io::format_double(v)), v);
    }
}

TEST(Io, BinaryHelpersRoundTrip) {
    std::stringstream ss;
    io::put_u32(ss, 0xdeadbeef);
    io::put_u64(ss, 0x0123456789abcdefULL);
    io::put_string(ss, "hello");
    const float f[3] = {1.5f, -2.0f, 3.25f};
    io::put_f32s(ss, f, 3);
    std::uint32_t a;
    std::uint64_t b;
    std::string s;
    float g[3];
    ASSERT_TRUE(io::get_u32(ss, a));
    ASSERT_TRUE(io::get_u64(ss, b));
    ASSERT_TRUE(io::get_string(ss, s));
    ASSERT_TRUE(io::get_f32s(ss, g, 3));
    EXPECT_EQ(a, 0xdeadbeefu);
    EXPECT_EQ(b, 0x0123456789abcdefULL);
    EXPECT_EQ(s, "hello");
    EXPECT_EQ(g[2], 3.25f);
    EXPECT_FALSE(io::get_u32(ss, a));
}

TEST(Io, JsonlRejectsMalformedLine) {
    TempDir dir;
    io::write_file_atomic(dir / "x.jsonl", "{\"a\":1}\n\n{bad\n");
    std::size_t seen = 0;
    EXPECT_THROW(io::for_each_jsonl(dir / "x.jsonl", [&](std::size_t, const io::Json&) { ++seen; }), ParseError);
    EXPECT_EQ(seen, 1u);
}
