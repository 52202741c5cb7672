#include "doctest.h"

#include <random>
#include <sstream>

#include "amao/codec.hpp"

using namespace amao;

TEST_CASE("black and white endpoints")
{
    const Bytes data{0x00, 0xFF};
    const auto img = bytes_to_image(data, WidthPolicy::fixed(2));
    CHECK(img.width == 2);
    CHECK(img.height == 1);
    CHECK(img.pixels == std::vector<std::uint8_t>{0, 255});
    CHECK(img.payload_len == 2);
}

TEST_CASE("mov eax, ecx bytes become pixels 137 and 200")
{
    const Bytes data{0x89, 0xC8, 0x90};
    const auto img = bytes_to_image(data, WidthPolicy::fixed(2));
    CHECK(img.height == 2);
    CHECK(img.pixels == std::vector<std::uint8_t>{137, 200, 144, 0});
    CHECK(img.payload_len == 3);
    CHECK(image_to_bytes(img) == data);
}

TEST_CASE("size table lookup")
{
    // Oracle: linear scan of the documented default buckets.
    const std::vector<std::pair<std::size_t, std::size_t>> buckets = {
        {10240, 32}, {30720, 64}, {61440, 128}, {102400, 256}, {204800, 384}};
    auto oracle = [&](std::size_t n) {
        for (auto [max, w] : buckets)
            if (n <= max)
                return w;
        return std::size_t{512};
    };
    const auto policy = WidthPolicy::default_table();
    for (std::size_t n : {1u, 300u, 10240u, 10241u, 30720u, 50000u, 100000u, 204800u, 204801u, 1000000u})
        CHECK(policy.width_for(n) == oracle(n));

    const Bytes data(300, 0x41);
    const auto img = bytes_to_image(data, policy);
    CHECK(img.width == 32);
    CHECK(img.height == 10);
}

TEST_CASE("empty input is rejected")
{
    CHECK_THROWS_WITH_AS(bytes_to_image(Bytes{}, WidthPolicy::fixed(4)), "empty binary", CodecError);
}

TEST_CASE("bad policies are rejected")
{
    CHECK_THROWS_AS(WidthPolicy::fixed(0), CodecError);
    CHECK_THROWS_AS(WidthPolicy::size_table({{100, 8}, {100, 16}}, 32), CodecError);
    CHECK_THROWS_AS(WidthPolicy::size_table({{100, 0}}, 32), CodecError);
}

TEST_CASE("round trip over random strings and policies")
{
    std::mt19937_64 rng(11);
    for (int t = 0; t < 500; ++t) {
        Bytes d(1 + rng() % 2048);
        for (auto& b : d)
            b = static_cast<std::uint8_t>(rng());
        const auto policy = (t % 2) ? WidthPolicy::default_table() : WidthPolicy::fixed(1 + rng() % 100);
        const auto img = bytes_to_image(d, policy);
        REQUIRE(img.pixels.size() == img.width * img.height);
        for (std::size_t i = d.size(); i < img.pixels.size(); ++i)
            REQUIRE(img.pixels[i] == 0);
        REQUIRE(image_to_bytes(img) == d);
    }
}

TEST_CASE("pgm and csv export")
{
    const auto img = bytes_to_image(Bytes{1, 2, 3}, WidthPolicy::fixed(2));
    std::ostringstream pgm, csv;
    write_pgm(img, pgm);
    write_pixel_csv(img, csv);
    CHECK(pgm.str().substr(0, 11) == "P5\n2 2\n255\n");
    CHECK(pgm.str().size() == 11 + 4);
    CHECK(csv.str() == "1,2\n3,0\n");
}
