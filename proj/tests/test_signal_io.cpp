#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <hcft/error.hpp>
#include <hcft/signal_io.hpp>

using namespace hcft;

namespace {

template <typename F>
bool raises(Err code, F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code() == code;
  } catch (...) {
    return false;
  }
  return false;
}

std::filesystem::path temp_file(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / "hcft_io_tests";
  std::filesystem::create_directories(dir);
  return dir / tag;
}

// Independent byte-level assembler used as the oracle for the parser: builds
// headers with stream formatting rather than the library's field writer.
struct OracleSignal {
  std::string label = "chan";
  double pmin = -100, pmax = 100;
  int dmin = -2048, dmax = 2047;
  std::size_t spr = 4;
};

std::string pad(const std::string& s, std::size_t w) {
  std::ostringstream os;
  os << std::left << std::setw(int(w)) << s;
  return os.str().substr(0, w);
}

std::vector<std::uint8_t> oracle_edf(const std::vector<OracleSignal>& sigs,
                                     std::size_t n_records, double rec_dur,
                                     const std::vector<std::vector<std::int16_t>>& digital,
                                     const std::string& version = "0") {
  std::ostringstream os;
  os << pad(version, 8) << pad("patient X", 80) << pad("session Y", 80) << pad("02.03.04", 8)
     << pad("05.06.07", 8) << pad(std::to_string(256 + 256 * sigs.size()), 8) << pad("", 44)
     << pad(std::to_string(n_records), 8) << pad(std::to_string(rec_dur), 8)
     << pad(std::to_string(sigs.size()), 4);
  for (const auto& s : sigs) os << pad(s.label, 16);
  for (std::size_t i = 0; i < sigs.size(); ++i) os << pad("transducer", 80);
  for (std::size_t i = 0; i < sigs.size(); ++i) os << pad("uV", 8);
  for (const auto& s : sigs) os << pad(std::to_string(int(s.pmin)), 8);
  for (const auto& s : sigs) os << pad(std::to_string(int(s.pmax)), 8);
  for (const auto& s : sigs) os << pad(std::to_string(s.dmin), 8);
  for (const auto& s : sigs) os << pad(std::to_string(s.dmax), 8);
  for (std::size_t i = 0; i < sigs.size(); ++i) os << pad("none", 80);
  for (const auto& s : sigs) os << pad(std::to_string(s.spr), 8);
  for (std::size_t i = 0; i < sigs.size(); ++i) os << pad("", 32);

  std::string head = os.str();
  std::vector<std::uint8_t> bytes(head.begin(), head.end());
  for (std::size_t r = 0; r < n_records; ++r)
    for (std::size_t s = 0; s < sigs.size(); ++s)
      for (std::size_t i = 0; i < sigs[s].spr; ++i) {
        auto u = static_cast<std::uint16_t>(digital[s][r * sigs[s].spr + i]);
        bytes.push_back(static_cast<std::uint8_t>(u & 0xff));
        bytes.push_back(static_cast<std::uint8_t>(u >> 8));
      }
  return bytes;
}

Recording random_recording(std::uint64_t seed, std::size_t channels, std::size_t len, double fs) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> amp(-80.0, 80.0);
  Recording rec;
  rec.fs = fs;
  for (std::size_t c = 0; c < channels; ++c) {
    rec.channels.push_back("ch" + std::to_string(c));
    std::vector<double> x(len);
    for (auto& v : x) v = amp(rng);
    rec.samples.push_back(std::move(x));
  }
  return rec;
}

} // namespace

TEST_CASE("edf decoding maps digital extremes onto the physical extremes exactly") {
  OracleSignal sig;
  std::vector<std::vector<std::int16_t>> digital = {{-2048, 0, 2047, 123}};
  auto bytes = oracle_edf({sig}, 1, 2.0, digital);
  Recording rec = parse_edf(bytes);

  REQUIRE(rec.samples.size() == 1);
  REQUIRE(rec.length() == 4);
  CHECK(rec.channels[0] == "chan");
  CHECK(rec.fs == doctest::Approx(4.0 / 2.0).epsilon(1e-12));
  // physical = (digital - dmin) * (pmax - pmin) / (dmax - dmin) + pmin
  CHECK(rec.samples[0][0] == -100.0);
  const double scale = 200.0 / 4095.0;
  CHECK(rec.samples[0][1] == doctest::Approx((0 + 2048) * scale - 100.0).epsilon(1e-12));
  CHECK(rec.samples[0][2] == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(rec.samples[0][2] == 100.0);
  CHECK(rec.samples[0][3] == doctest::Approx((123 + 2048) * scale - 100.0).epsilon(1e-12));

  REQUIRE(rec.edf != nullptr);
  CHECK(rec.edf->patient_id == "patient X");
  CHECK(rec.edf->recording_id == "session Y");
  CHECK(rec.edf->num_records == 1);
  CHECK(rec.edf->record_duration == 2.0);
  CHECK(rec.edf->signals[0].samples_per_record == 4);
}

TEST_CASE("edf multi-record layout interleaves channels record by record") {
  OracleSignal a, b;
  a.label = "first";
  b.label = "second";
  a.spr = b.spr = 2;
  // Channel data laid out per record: record 0 holds a[0..2), b[0..2).
  std::vector<std::vector<std::int16_t>> digital = {{10, 20, 30, 40}, {-10, -20, -30, -40}};
  auto bytes = oracle_edf({a, b}, 2, 1.0, digital);
  Recording rec = parse_edf(bytes);

  REQUIRE(rec.samples.size() == 2);
  REQUIRE(rec.length() == 4);
  CHECK(rec.fs == 2.0);
  const double scale = 200.0 / 4095.0;
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(rec.samples[0][i] == doctest::Approx((digital[0][i] + 2048) * scale - 100.0).epsilon(1e-12));
    CHECK(rec.samples[1][i] == doctest::Approx((digital[1][i] + 2048) * scale - 100.0).epsilon(1e-12));
  }
}

TEST_CASE("edf write then parse preserves headers and samples to quantization accuracy") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    Recording rec = random_recording(seed, 3, 200, 100.0);
    rec.subject = "subj";
    rec.name = "sess";
    auto bytes = write_edf(rec);
    Recording back = parse_edf(bytes);

    REQUIRE(back.samples.size() == 3);
    REQUIRE(back.length() == 200);
    CHECK(back.fs == doctest::Approx(100.0).epsilon(1e-9));
    CHECK(back.edf->patient_id == "subj");
    CHECK(back.edf->recording_id == "sess");
    CHECK(back.edf->version == "0");
    CHECK(back.edf->num_records == 1);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(back.channels[c] == rec.channels[c]);
      const auto& sig = back.edf->signals[c];
      const double step =
          (sig.physical_max - sig.physical_min) / (double(sig.digital_max) - double(sig.digital_min));
      double worst = 0;
      for (std::size_t i = 0; i < 200; ++i)
        worst = std::max(worst, std::abs(back.samples[c][i] - rec.samples[c][i]));
      CHECK(worst <= step * (1.0 + 1e-9));
    }
  }
}

TEST_CASE("edf parse then write reproduces the original bytes bit for bit") {
  OracleSignal a, b;
  a.label = "c0";
  b.label = "c1";
  a.spr = b.spr = 5;
  b.pmin = -40;
  b.pmax = 260;
  b.dmin = -300;
  b.dmax = 900;
  std::mt19937_64 rng(99);
  std::vector<std::vector<std::int16_t>> digital(2);
  for (std::size_t r = 0; r < 3 * 5; ++r) {
    digital[0].push_back(std::int16_t(std::uniform_int_distribution<int>(a.dmin, a.dmax)(rng)));
    digital[1].push_back(std::int16_t(std::uniform_int_distribution<int>(b.dmin, b.dmax)(rng)));
  }
  auto bytes = oracle_edf({a, b}, 3, 0.5, digital);
  Recording rec = parse_edf(bytes);
  auto rewritten = write_edf(rec);
  REQUIRE(rewritten.size() == bytes.size());
  CHECK(rewritten == bytes);
}

TEST_CASE("edf rewrite after trimming to fewer whole records patches the count field") {
  OracleSignal sig;
  sig.spr = 4;
  std::vector<std::vector<std::int16_t>> digital = {
      {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}};
  auto bytes = oracle_edf({sig}, 3, 1.0, digital);
  Recording rec = parse_edf(bytes);
  for (auto& ch : rec.samples) ch.resize(8); // keep two records
  auto rewritten = write_edf(rec);
  Recording back = parse_edf(rewritten);
  CHECK(back.edf->num_records == 2);
  CHECK(back.length() == 8);
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(back.samples[0][i] == doctest::Approx(rec.samples[0][i]).epsilon(1e-12));
  // An odd sample count cannot form whole 4-sample records.
  Recording ragged = rec;
  for (auto& ch : ragged.samples) ch.resize(7);
  CHECK(raises(Err::ShapeMismatch, [&] { (void)write_edf(ragged); }));
}

TEST_CASE("edf parser rejects malformed inputs with typed errors") {
  OracleSignal sig;
  std::vector<std::vector<std::int16_t>> digital = {{1, 2, 3, 4}};
  auto good = oracle_edf({sig}, 1, 1.0, digital);

  CHECK(raises(Err::BadMagic, [&] { (void)parse_edf({}); }));
  CHECK(raises(Err::BadMagic, [&] {
    (void)parse_edf(std::vector<std::uint8_t>(good.begin(), good.begin() + 100));
  }));
  CHECK(raises(Err::BadMagic, [&] { (void)parse_edf(oracle_edf({sig}, 1, 1.0, digital, "7")); }));

  SUBCASE("header size field disagrees with the signal count") {
    auto bad = good;
    bad[184] = '9';
    CHECK(raises(Err::InconsistentHeader, [&] { (void)parse_edf(bad); }));
  }
  SUBCASE("non-numeric record count") {
    auto bad = good;
    bad[236] = 'x';
    CHECK(raises(Err::InconsistentHeader, [&] { (void)parse_edf(bad); }));
  }
  SUBCASE("zero record duration") {
    CHECK(raises(Err::InconsistentHeader, [&] { (void)parse_edf(oracle_edf({sig}, 1, 0.0, digital)); }));
  }
  SUBCASE("signal headers cut off") {
    std::vector<std::uint8_t> cut(good.begin(), good.begin() + 300);
    CHECK(raises(Err::InconsistentHeader, [&] { (void)parse_edf(cut); }));
  }
  SUBCASE("mixed samples-per-record") {
    OracleSignal other;
    other.spr = 3;
    std::vector<std::vector<std::int16_t>> two = {{1, 2, 3, 4}, {5, 6, 7}};
    CHECK(raises(Err::InconsistentHeader, [&] { (void)parse_edf(oracle_edf({sig, other}, 1, 1.0, two)); }));
  }
  SUBCASE("flat digital range") {
    OracleSignal flat;
    flat.dmin = flat.dmax = 5;
    CHECK(raises(Err::DegenerateScale, [&] { (void)parse_edf(oracle_edf({flat}, 1, 1.0, digital)); }));
  }
  SUBCASE("flat physical range") {
    OracleSignal flat;
    flat.pmin = flat.pmax = 1.5;
    CHECK(raises(Err::DegenerateScale, [&] { (void)parse_edf(oracle_edf({flat}, 1, 1.0, digital)); }));
  }
}

TEST_CASE("edf truncated data records report the broken record index") {
  OracleSignal sig;
  sig.spr = 4;
  std::vector<std::vector<std::int16_t>> digital = {
      {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}};
  auto good = oracle_edf({sig}, 3, 1.0, digital);

  // Remove half of the final record.
  std::vector<std::uint8_t> cut(good.begin(), good.end() - 4);
  try {
    (void)parse_edf(cut);
    FAIL("expected a truncation error");
  } catch (const Error& e) {
    CHECK(e.code() == Err::TruncatedRecord);
    CHECK(std::string(e.what()).find("record 2") != std::string::npos);
  }

  // Surplus bytes beyond the declared record count are ignored.
  auto padded = good;
  padded.insert(padded.end(), 5, std::uint8_t(0xab));
  Recording rec = parse_edf(padded);
  CHECK(rec.length() == 12);
}

TEST_CASE("edf parser survives arbitrary truncation and byte corruption") {
  OracleSignal a, b;
  b.spr = a.spr = 6;
  std::mt19937_64 rng(31);
  std::vector<std::vector<std::int16_t>> digital(2);
  for (std::size_t i = 0; i < 2 * 6; ++i) {
    digital[0].push_back(std::int16_t(std::uniform_int_distribution<int>(-2048, 2047)(rng)));
    digital[1].push_back(std::int16_t(std::uniform_int_distribution<int>(-2048, 2047)(rng)));
  }
  auto good = oracle_edf({a, b}, 2, 1.0, digital);

  auto survives = [](const std::vector<std::uint8_t>& bytes) {
    try {
      (void)parse_edf(bytes);
      return true;
    } catch (const Error&) {
      return true; // typed failure is the accepted outcome
    } catch (...) {
      return false;
    }
  };

  for (std::size_t cut = 0; cut <= good.size(); cut += 7)
    CHECK(survives(std::vector<std::uint8_t>(good.begin(), good.begin() + std::ptrdiff_t(cut))));

  std::uniform_int_distribution<std::size_t> pos(0, good.size() - 1);
  std::uniform_int_distribution<int> byte(0, 255);
  for (int trial = 0; trial < 200; ++trial) {
    auto mutated = good;
    for (int k = 0; k < 3; ++k) mutated[pos(rng)] = std::uint8_t(byte(rng));
    CHECK(survives(mutated));
  }
}

TEST_CASE("edf writer rejects recordings it cannot quantize") {
  Recording empty;
  empty.fs = 100;
  CHECK(raises(Err::ZeroDuration, [&] { (void)write_edf(empty); }));

  Recording zero_len = random_recording(1, 2, 0, 100.0);
  CHECK(raises(Err::ZeroDuration, [&] { (void)write_edf(zero_len); }));

  Recording flat = random_recording(1, 1, 16, 100.0);
  std::fill(flat.samples[0].begin(), flat.samples[0].end(), 3.25);
  CHECK(raises(Err::Unquantizable, [&] { (void)write_edf(flat); }));

  Recording ragged = random_recording(1, 2, 16, 100.0);
  ragged.samples[1].pop_back();
  CHECK(raises(Err::ShapeMismatch, [&] { (void)write_edf(ragged); }));

  Recording no_rate = random_recording(1, 1, 16, 100.0);
  no_rate.fs = 0;
  CHECK(raises(Err::InvalidRate, [&] { (void)write_edf(no_rate); }));
}

TEST_CASE("csv recordings read back labels and columns") {
  auto path = temp_file("table.csv");
  {
    std::ofstream out(path);
    out << "fp1,fp2,cz\r\n";
    out << "1.5,2.5,3.5\n";
    out << "-4,0.25,6\n";
    out << "\n"; // blank line ignored
    out << "7,8,9e-1\n";
  }
  Recording rec = read_csv_recording(path.string(), 256.0);
  CHECK(rec.fs == 256.0);
  REQUIRE(rec.channels == std::vector<std::string>{"fp1", "fp2", "cz"});
  REQUIRE(rec.length() == 3);
  CHECK(rec.samples[0] == std::vector<double>{1.5, -4.0, 7.0});
  CHECK(rec.samples[1] == std::vector<double>{2.5, 0.25, 8.0});
  CHECK(rec.samples[2] == std::vector<double>{3.5, 6.0, 0.9});

  Recording picked = read_csv_recording(path.string(), 256.0, {"cz", "fp1"});
  REQUIRE(picked.channels == std::vector<std::string>{"cz", "fp1"});
  CHECK(picked.samples[0] == std::vector<double>{3.5, 6.0, 0.9});
  CHECK(picked.samples[1] == std::vector<double>{1.5, -4.0, 7.0});

  CHECK(raises(Err::ChannelMismatch,
               [&] { (void)read_csv_recording(path.string(), 256.0, {"nope"}); }));
  CHECK(raises(Err::InvalidRate, [&] { (void)read_csv_recording(path.string(), 0.0); }));
  CHECK(raises(Err::IoFailure, [&] { (void)read_csv_recording("/definitely/not/here.csv", 1.0); }));
}

TEST_CASE("csv reader names the offending row and column") {
  auto ragged = temp_file("ragged.csv");
  {
    std::ofstream out(ragged);
    out << "a,b\n1,2\n3\n";
  }
  try {
    (void)read_csv_recording(ragged.string(), 1.0);
    FAIL("expected a ragged-row error");
  } catch (const Error& e) {
    CHECK(e.code() == Err::RaggedRows);
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }

  auto alpha = temp_file("alpha.csv");
  {
    std::ofstream out(alpha);
    out << "a,b\n1,2\n3,oops\n";
  }
  try {
    (void)read_csv_recording(alpha.string(), 1.0);
    FAIL("expected a non-numeric cell error");
  } catch (const Error& e) {
    CHECK(e.code() == Err::NonNumericCell);
    std::string what = e.what();
    CHECK(what.find("row 2") != std::string::npos);
    CHECK(what.find("column 2") != std::string::npos);
  }

  auto empty = temp_file("empty.csv");
  { std::ofstream out(empty); }
  CHECK(raises(Err::NoRecordings, [&] { (void)read_csv_recording(empty.string(), 1.0); }));

  auto headonly = temp_file("headonly.csv");
  {
    std::ofstream out(headonly);
    out << "a,b\n";
  }
  CHECK(raises(Err::NoRecordings, [&] { (void)read_csv_recording(headonly.string(), 1.0); }));
}

TEST_CASE("csv write then read round-trips samples exactly") {
  Recording rec = random_recording(7, 4, 64, 128.0);
  auto path = temp_file("roundtrip.csv");
  write_csv_recording(path.string(), rec);
  Recording back = read_csv_recording(path.string(), 128.0);
  REQUIRE(back.channels == rec.channels);
  REQUIRE(back.length() == rec.length());
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 64; ++i)
      CHECK(back.samples[c][i] == doctest::Approx(rec.samples[c][i]).epsilon(1e-15));
}

TEST_CASE("channel selection reorders and validates labels") {
  Recording rec = random_recording(3, 3, 8, 10.0);
  Recording out = select_channels(rec, {"ch2", "ch0"});
  REQUIRE(out.channels == std::vector<std::string>{"ch2", "ch0"});
  CHECK(out.samples[0] == rec.samples[2]);
  CHECK(out.samples[1] == rec.samples[0]);
  CHECK(out.fs == rec.fs);
  CHECK(raises(Err::ChannelMismatch, [&] { (void)select_channels(rec, {"ch9"}); }));
}

TEST_CASE("annotation normalization sorts, merges, and validates spans") {
  auto merged = normalize_annotations({{100, 160}, {10, 25}, {20, 40}, {40, 50}});
  REQUIRE(merged.size() == 2);
  CHECK(merged[0].onset == 10);
  CHECK(merged[0].offset == 50); // touching spans coalesce
  CHECK(merged[1].onset == 100);
  CHECK(merged[1].offset == 160);

  CHECK(normalize_annotations({}).empty());
  CHECK(raises(Err::UnsortedAnnotations, [&] { (void)normalize_annotations({{50, 50}}); }));
  CHECK(raises(Err::UnsortedAnnotations, [&] { (void)normalize_annotations({{60, 20}}); }));
  CHECK(raises(Err::UnsortedAnnotations, [&] { (void)normalize_annotations({{-5, 20}}); }));
}

TEST_CASE("annotation sidecars round-trip through text") {
  auto path = temp_file("spans.tsv");
  write_annotations(path.string(), {{12.5, 60.25}, {3600, 3700.75}});
  auto spans = read_annotations(path.string());
  REQUIRE(spans.size() == 2);
  CHECK(spans[0].onset == 12.5);
  CHECK(spans[0].offset == 60.25);
  CHECK(spans[1].onset == 3600.0);
  CHECK(spans[1].offset == 3700.75);

  auto manual = temp_file("manual.tsv");
  {
    std::ofstream out(manual);
    out << "# comment line\n\n200\t300\n10\t20\n";
  }
  auto sorted = read_annotations(manual.string());
  REQUIRE(sorted.size() == 2);
  CHECK(sorted[0].onset == 10);
  CHECK(sorted[1].onset == 200);

  auto bad = temp_file("bad.tsv");
  {
    std::ofstream out(bad);
    out << "12\tpotato\n";
  }
  CHECK(raises(Err::NonNumericCell, [&] { (void)read_annotations(bad.string()); }));
}
