#include <set>

#include "avr/base64.hpp"
#include "avr/error.hpp"
#include "avr/media.hpp"
#include "avr/process.hpp"
#include "avr/random.hpp"
#include "doctest.h"
#include "support/fixtures.hpp"

using namespace avr;

TEST_SUITE("support") {

TEST_CASE("fnv1a64 and splitmix64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  SplitMix64 rng(0);
  CHECK(rng.next() == 0xe220a8397b1dcdafULL);
  CHECK(rng.next() == 0x6e789e6aa1b965f4ULL);
}

TEST_CASE("generator ranges") {
  SplitMix64 rng(3);
  std::array<int, 7> counts{};
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < 70000; ++i) {
    const auto b = rng.below(7);
    REQUIRE(b < 7);
    counts[b]++;
    const double u = rng.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    const double n = rng.normal();
    sum += n;
    sq += n * n;
  }
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
  CHECK(std::abs(sum / 70000) < 0.02);
  CHECK(std::abs(sq / 70000 - 1.0) < 0.03);
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
}

TEST_CASE("shuffle is a permutation") {
  SplitMix64 rng(4);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
  shuffle(v, rng);
  CHECK(std::set<int>(v.begin(), v.end()).size() == 50);
}

TEST_CASE("base64") {
  const std::string text = "any carnal pleas";
  const std::vector<std::uint8_t> bytes(text.begin(), text.end());
  CHECK(base64_encode(bytes) == "YW55IGNhcm5hbCBwbGVhcw==");
  CHECK(base64_decode("YW55IGNhcm5hbCBwbGVhcw==") == bytes);
  CHECK(base64_encode({}) == "");
  SplitMix64 rng(5);
  for (int n = 0; n < 40; ++n) {
    std::vector<std::uint8_t> b(static_cast<std::size_t>(n));
    for (auto& x : b) x = static_cast<std::uint8_t>(rng.next());
    CHECK(base64_decode(base64_encode(b)) == b);
  }
  CHECK_THROWS_AS(base64_decode("abc"), DataError);
  CHECK_THROWS_AS(base64_decode("ab$="), DataError);
}

TEST_CASE("mp4 probe") {
  const auto probe = media::probe_mp4(fixture::tiny_mp4(1000, 4500));
  CHECK(probe.major_brand == "isom");
  REQUIRE(probe.duration_s.has_value());
  CHECK(*probe.duration_s == doctest::Approx(4.5));
  CHECK_THROWS_WITH_AS(media::probe_mp4(""), "empty upload", std::invalid_argument);
  CHECK_THROWS_AS(media::probe_mp4("GIF89a this is not a movie at all"), std::invalid_argument);
  std::string broken = fixture::tiny_mp4();
  broken[2] = '\x7f';
  CHECK_THROWS_AS(media::probe_mp4(broken), std::invalid_argument);
}

TEST_CASE("shell commands") {
  const auto ok = run_shell("echo hello; echo oops 1>&2", std::chrono::milliseconds(5000));
  CHECK(ok.exit_code == 0);
  CHECK_FALSE(ok.timed_out);
  CHECK(ok.output.find("hello") != std::string::npos);
  CHECK(ok.output.find("oops") != std::string::npos);
  CHECK(run_shell("exit 3", std::chrono::milliseconds(5000)).exit_code == 3);
  const auto start = std::chrono::steady_clock::now();
  const auto slow = run_shell("sleep 5", std::chrono::milliseconds(200));
  CHECK(slow.timed_out);
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(3));
}

TEST_CASE("command templates quote values") {
  CHECK(shell_quote("a b") == "'a b'");
  CHECK(shell_quote("it's") == "'it'\\''s'");
  const auto cmd = expand_command("cp {input} {out}/x", {{"input", "my file.mp4"}, {"out", "/tmp/o"}});
  CHECK(cmd == "cp 'my file.mp4' '/tmp/o'/x");
  CHECK_THROWS_AS(expand_command("run {nope}", {}), std::invalid_argument);
  CHECK_THROWS_AS(expand_command("run {input", {{"input", "x"}}), std::invalid_argument);
  fixture::TempDir dir;
  const auto path = (dir / "we$ird 'name'.txt").string();
  CHECK(run_shell(expand_command("echo ok > {p}", {{"p", path}}), std::chrono::milliseconds(5000)).exit_code == 0);
  CHECK(fixture::read_text(path) == "ok\n");
}

}
