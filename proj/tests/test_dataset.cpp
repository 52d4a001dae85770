#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include <hcft/dataset.hpp>
#include <hcft/error.hpp>

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

EpochDataset sample_dataset(std::uint64_t seed, std::size_t n = 6, std::size_t channels = 2,
                            std::size_t len = 8) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> amp(-3.0, 3.0);
  EpochDataset ds;
  ds.channels = channels;
  ds.epoch_len = len;
  ds.fs = 16.0;
  ds.window_s = double(len) / 16.0;
  for (std::size_t c = 0; c < channels; ++c) ds.channel_labels.push_back("ch" + std::to_string(c));
  ds.subjects = {"alpha", "beta"};
  ds.recordings = {"alpha_r0", "beta_r0"};
  for (std::size_t e = 0; e < n; ++e) {
    EpochProvenance p;
    p.label = int(e % 2);
    p.subject = std::uint32_t(e % 2);
    p.recording = std::uint32_t(e % 2);
    p.start_s = double(e) * ds.window_s;
    ds.index.push_back(p);
    for (std::size_t i = 0; i < ds.epoch_stride(); ++i) ds.data.push_back(amp(rng));
  }
  return ds;
}

} // namespace

TEST_CASE("epoch archive round-trips every field") {
  EpochDataset ds = sample_dataset(11);
  auto bytes = epd_bytes(ds);
  EpochDataset back = parse_epd(bytes);

  CHECK(back.channels == ds.channels);
  CHECK(back.epoch_len == ds.epoch_len);
  CHECK(back.fs == ds.fs);
  CHECK(back.window_s == ds.window_s);
  CHECK(back.channel_labels == ds.channel_labels);
  CHECK(back.subjects == ds.subjects);
  CHECK(back.recordings == ds.recordings);
  REQUIRE(back.size() == ds.size());
  for (std::size_t e = 0; e < ds.size(); ++e) {
    CHECK(back.index[e].label == ds.index[e].label);
    CHECK(back.index[e].subject == ds.index[e].subject);
    CHECK(back.index[e].recording == ds.index[e].recording);
    CHECK(back.index[e].start_s == ds.index[e].start_s);
  }
  REQUIRE(back.data.size() == ds.data.size());
  for (std::size_t i = 0; i < ds.data.size(); ++i)
    CHECK(back.data[i] == double(float(ds.data[i]))); // samples stored as 32-bit floats

  // A second pass through the archive is lossless and byte-stable.
  CHECK(epd_bytes(back) == epd_bytes(parse_epd(epd_bytes(back))));
}

TEST_CASE("epoch archive bytes are deterministic") {
  CHECK(epd_bytes(sample_dataset(5)) == epd_bytes(sample_dataset(5)));
  CHECK(epd_bytes(sample_dataset(5)) != epd_bytes(sample_dataset(6)));
}

TEST_CASE("epoch archive saves to and loads from disk") {
  auto dir = std::filesystem::temp_directory_path() / "hcft_io_tests";
  std::filesystem::create_directories(dir);
  auto path = (dir / "sample.epd").string();
  EpochDataset ds = sample_dataset(3);
  save_epd(path, ds);
  EpochDataset back = load_epd(path);
  CHECK(back.size() == ds.size());
  CHECK(epd_bytes(back) == epd_bytes(parse_epd(epd_bytes(ds))));
}

TEST_CASE("epoch archive parser rejects malformed bytes with typed errors") {
  auto bytes = epd_bytes(sample_dataset(9));

  CHECK(raises(Err::BadMagic, [] { (void)parse_epd({}); }));
  auto wrong = bytes;
  wrong[0] = 'X';
  CHECK(raises(Err::BadMagic, [&] { (void)parse_epd(wrong); }));

  auto newer = bytes;
  newer[4] = 0x7f; // version field
  CHECK(raises(Err::InconsistentHeader, [&] { (void)parse_epd(newer); }));

  for (std::size_t cut : {5u, 20u, 60u, 150u}) {
    std::vector<std::uint8_t> trunc(bytes.begin(), bytes.begin() + std::ptrdiff_t(cut));
    CHECK(raises(Err::TruncatedRecord, [&] { (void)parse_epd(trunc); }));
  }
  std::vector<std::uint8_t> almost(bytes.begin(), bytes.end() - 2);
  CHECK(raises(Err::TruncatedRecord, [&] { (void)parse_epd(almost); }));

  EpochDataset bad_ref = sample_dataset(9);
  bad_ref.index[0].subject = 99;
  CHECK(raises(Err::InconsistentHeader, [&] { (void)epd_bytes(bad_ref); }));

  EpochDataset short_data = sample_dataset(9);
  short_data.data.pop_back();
  CHECK(raises(Err::ShapeMismatch, [&] { (void)epd_bytes(short_data); }));
}

TEST_CASE("appending datasets merges provenance tables") {
  EpochDataset a = sample_dataset(1);
  EpochDataset b = sample_dataset(2);
  b.subjects = {"beta", "gamma"}; // shares "beta" with a
  b.recordings = {"beta_r1", "gamma_r0"};

  EpochDataset merged;
  append_epochs(merged, a);
  append_epochs(merged, b);

  REQUIRE(merged.size() == a.size() + b.size());
  CHECK(merged.subjects == std::vector<std::string>{"alpha", "beta", "gamma"});
  CHECK(merged.recordings ==
        std::vector<std::string>{"alpha_r0", "beta_r0", "beta_r1", "gamma_r0"});
  // b's subject 0 ("beta") must now resolve to merged id 1
  CHECK(merged.subjects[merged.index[a.size()].subject] == "beta");
  CHECK(merged.recordings[merged.index[a.size()].recording] == "beta_r1");
  for (std::size_t i = 0; i < b.data.size(); ++i)
    CHECK(merged.data[a.data.size() + i] == b.data[i]);

  EpochDataset odd = sample_dataset(3, 4, 3, 8); // different channel count
  CHECK(raises(Err::GeometryMismatch, [&] { append_epochs(merged, odd); }));
}
