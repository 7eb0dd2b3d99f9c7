#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>

#include "doctest.h"
#include "transsleep/dataset.hpp"
#include "transsleep/edf.hpp"
#include "transsleep/preprocess.hpp"
#include "transsleep/synth.hpp"

using namespace transsleep;
namespace pp = transsleep::preprocess;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

edf::Signal eeg_signal(std::size_t spr, std::vector<std::int16_t> digital) {
  edf::Signal s;
  s.label = "EEG Fpz-Cz";
  s.physical_dimension = "uV";
  s.physical_min = -250;
  s.physical_max = 250;
  s.digital_min = -2048;
  s.digital_max = 2047;
  s.samples_per_record = spr;
  s.digital = std::move(digital);
  return s;
}

std::vector<EpochRecord> epochs_from(const std::vector<Stage>& labels) {
  std::vector<EpochRecord> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    EpochRecord e;
    e.label = labels[i];
    e.epoch_index = i;
    out.push_back(e);
  }
  return out;
}

double gain_at(const std::vector<pp::Section>& sos, double f, double fs) {
  const std::complex<double> z = std::polar(1.0, -2.0 * std::numbers::pi * f / fs);
  std::complex<double> h = 1.0;
  for (const auto& c : sos) h *= (c[0] + c[1] * z + c[2] * z * z) / (c[3] + c[4] * z + c[5] * z * z);
  return std::abs(h);
}

std::vector<double> sine(double freq, double seconds, double fs = 100.0, double amp = 1.0) {
  std::vector<double> x(static_cast<std::size_t>(seconds * fs));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * freq * i / fs);
  return x;
}

// Transition rule recomputed locally: an epoch transitions when it differs
// from any existing neighbour.
std::size_t count_transitions(const std::vector<Stage>& s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool left = i > 0 && s[i - 1] != s[i];
    const bool right = i + 1 < s.size() && s[i + 1] != s[i];
    n += (left || right) ? 1 : 0;
  }
  return n;
}

}  // namespace

TEST_CASE("EDF reading and writing") {
  SUBCASE("minimal file round-trips bit-exactly") {
    edf::Recording rec;
    rec.num_records = 1;
    rec.record_duration = 1.0;
    rec.signals.push_back(eeg_signal(10, {-2048, -1000, -1, 0, 1, 7, 300, 1234, 2000, 2047}));
    const auto bytes = edf::write(rec);
    CHECK(bytes.size() == 256 + 256 + 20);
    const edf::Recording back = edf::parse(bytes);
    REQUIRE(back.signals.size() == 1);
    const auto& s = back.signals[0];
    CHECK(s.label == "EEG Fpz-Cz");
    CHECK(s.samples_per_record == 10);
    CHECK(s.digital == rec.signals[0].digital);
    for (std::size_t i = 0; i < 10; ++i) CHECK(s.to_digital(s.physical[i]) == rec.signals[0].digital[i]);
    CHECK(edf::write(back) == bytes);
  }
  SUBCASE("affine digital-to-physical map") {
    const edf::Signal s = eeg_signal(1, {});
    const double expected = (0.0 - (-2048.0)) * (250.0 - (-250.0)) / (2047.0 - (-2048.0)) + (-250.0);
    CHECK(s.to_physical(0) == doctest::Approx(expected).epsilon(1e-15));
    CHECK(s.to_physical(0) == doctest::Approx(0.061).epsilon(1e-2));
    CHECK(s.to_physical(-2048) == -250.0);
    CHECK(s.to_physical(2047) == 250.0);
  }
  SUBCASE("zero signals gives an empty recording") {
    edf::Recording rec;
    rec.num_records = 0;
    const edf::Recording back = edf::parse(edf::write(rec));
    CHECK(back.signals.empty());
  }
  SUBCASE("random multi-signal recording round-trips") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> d(-32768, 32767);
    edf::Recording rec;
    rec.num_records = 7;
    rec.record_duration = 30;
    for (std::size_t spr : {300u, 30u, 1u}) {
      edf::Signal s;
      s.label = "sig" + std::to_string(spr);
      s.physical_min = -1234.5;
      s.physical_max = 987.25;
      s.samples_per_record = spr;
      for (std::size_t i = 0; i < 7 * spr; ++i) s.digital.push_back(static_cast<std::int16_t>(d(rng)));
      rec.signals.push_back(s);
    }
    const auto back = edf::parse(edf::write(rec));
    CHECK(back.num_records == 7);
    CHECK(back.record_duration == 30.0);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(back.signals[i].digital == rec.signals[i].digital);
      for (std::size_t k = 0; k < rec.signals[i].digital.size(); ++k) {
        CHECK(back.signals[i].physical[k] == rec.signals[i].to_physical(rec.signals[i].digital[k]));
      }
    }
  }
  SUBCASE("physical samples quantize on write") {
    edf::Recording rec;
    rec.num_records = 2;
    edf::Signal s = eeg_signal(3, {});
    s.physical = {-250, -0.1, 0.2, 100, 249.9, 1e6};
    rec.signals.push_back(s);
    const auto back = edf::parse(edf::write(rec));
    CHECK(back.signals[0].digital.front() == -2048);
    CHECK(back.signals[0].digital.back() == 2047);
  }
  SUBCASE("unknown record count is inferred from the file size") {
    edf::Recording rec;
    rec.num_records = 3;
    rec.signals.push_back(eeg_signal(2, {1, 2, 3, 4, 5, 6}));
    auto bytes = edf::write(rec);
    const std::string minus_one = "-1      ";
    std::copy(minus_one.begin(), minus_one.end(), bytes.begin() + 236);
    CHECK(edf::parse(bytes).signals[0].digital.size() == 6);
  }
  SUBCASE("errors carry byte offsets") {
    edf::Recording rec;
    rec.num_records = 1;
    rec.signals.push_back(eeg_signal(10, std::vector<std::int16_t>(10, 5)));
    const auto bytes = edf::write(rec);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 1);
    CHECK_THROWS_AS(edf::parse(truncated), edf::ParseError);
    CHECK_THROWS_AS(edf::parse(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 100)), edf::ParseError);

    auto garbage = bytes;
    garbage[252] = 'x';
    try {
      edf::parse(garbage);
      FAIL("expected a parse error");
    } catch (const edf::ParseError& e) {
      CHECK(e.offset() == 252);
      CHECK(std::string(e.what()).find("non-numeric") != std::string::npos);
    }

    edf::Recording flat = rec;
    flat.signals[0].physical_max = flat.signals[0].physical_min;
    try {
      edf::parse(edf::write(flat));
      FAIL("expected a parse error");
    } catch (const edf::ParseError& e) {
      CHECK(e.offset() == 256 + 104);
      CHECK(std::string(e.what()).find("physical minimum equals") != std::string::npos);
    }
  }
}

TEST_CASE("TAL annotations") {
  SUBCASE("single annotation") {
    const std::string tal = std::string("+0\x15") + "30\x15\x14Sleep stage W\x14" + std::string(1, '\0');
    const auto anns = edf::parse_tal(bytes_of(tal));
    REQUIRE(anns.size() == 1);
    CHECK(anns[0].onset == 0.0);
    CHECK(anns[0].duration == 30.0);
    CHECK(anns[0].text == "Sleep stage W");
  }
  SUBCASE("empty track") { CHECK(edf::parse_tal({}).empty()); }
  SUBCASE("two back-to-back annotations") {
    const std::string tal = edf::encode_tal({0, 30, "Sleep stage W"}) + edf::encode_tal({30, 90, "Sleep stage 1"});
    const auto anns = edf::parse_tal(bytes_of(tal));
    REQUIRE(anns.size() == 2);
    CHECK(anns[0].text == "Sleep stage W");
    CHECK(anns[1].onset == 30.0);
    CHECK(anns[1].duration == 90.0);
  }
  SUBCASE("time-keeping entries and padding are skipped") {
    std::string tal = std::string("+0\x14\x14", 4) + std::string(1, '\0') + edf::encode_tal({0, 30, "Sleep stage 2"});
    tal += std::string(8, '\0');
    const auto anns = edf::parse_tal(bytes_of(tal));
    REQUIRE(anns.size() == 1);
    CHECK(anns[0].text == "Sleep stage 2");
  }
  SUBCASE("malformed delimiters report offsets") {
    try {
      edf::parse_tal(bytes_of(std::string("+0\x15") + "30Sleep"));
      FAIL("expected a parse error");
    } catch (const edf::ParseError& e) {
      CHECK(e.offset() == 3);
    }
    CHECK_THROWS_AS(edf::parse_tal(bytes_of("0\x14x\x14")), edf::ParseError);
    CHECK_THROWS_AS(edf::parse_tal(bytes_of(std::string("+0\x14") + "unterminated")), edf::ParseError);
  }
  SUBCASE("hypnogram stored as EDF+ annotation signal") {
    edf::Recording hyp;
    hyp.num_records = 2;
    hyp.signals.push_back(edf::make_annotation_signal(
        {std::string("+0\x14\x14", 4) + std::string(1, '\0') + edf::encode_tal({0, 60, "Sleep stage W"}),
         edf::encode_tal({60, 30, "Sleep stage R"})},
        64));
    const auto anns = edf::parse_hypnogram(edf::write(hyp));
    REQUIRE(anns.size() == 2);
    CHECK(anns[1].text == "Sleep stage R");
    CHECK(anns[1].onset == 60.0);
  }
}

TEST_CASE("label mapping") {
  CHECK(edf::map_label("Sleep stage 4") == Stage::N3);
  CHECK(edf::map_label("Sleep stage 3") == Stage::N3);
  CHECK(edf::map_label("Movement time") == std::nullopt);
  CHECK(edf::map_label("Sleep stage ?") == std::nullopt);
  CHECK(edf::map_label("Sleep stage R") == Stage::REM);
  CHECK(edf::map_label("Sleep stage W") == Stage::W);
  CHECK(edf::map_label("Sleep stage 1") == Stage::N1);
  CHECK(edf::map_label("Sleep stage 2") == Stage::N2);
  CHECK_THROWS_WITH_AS(edf::map_label("Lights off"), doctest::Contains("Lights off"), std::invalid_argument);
}

TEST_CASE("wake trimming") {
  SUBCASE("long leading wake keeps 60 epochs") {
    std::vector<Stage> labels(100, Stage::W);
    for (Stage s : {Stage::N1, Stage::N2, Stage::N2}) labels.push_back(s);
    const auto out = pp::trim_wake(epochs_from(labels));
    CHECK(out.size() == 63);
    CHECK(out.front().epoch_index == 40);
    CHECK(out[60].label == Stage::N1);
  }
  SUBCASE("short leading wake is kept") {
    std::vector<Stage> labels(10, Stage::W);
    labels.push_back(Stage::N1);
    CHECK(pp::trim_wake(epochs_from(labels)).size() == 11);
  }
  SUBCASE("interior wake is untouched, trailing wake trimmed") {
    std::vector<Stage> labels{Stage::N2};
    labels.insert(labels.end(), 70, Stage::W);
    labels.push_back(Stage::N3);
    labels.insert(labels.end(), 80, Stage::W);
    const auto out = pp::trim_wake(epochs_from(labels));
    CHECK(out.size() == 1 + 70 + 1 + 60);
  }
  SUBCASE("all-wake recording is an error") {
    CHECK_THROWS_AS(pp::trim_wake(epochs_from(std::vector<Stage>(5, Stage::W))), pp::PreprocessError);
  }
  SUBCASE("never removes sleep epochs") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      const auto stages = synth::stage_chain(rng(), 300, 0.97);
      if (std::all_of(stages.begin(), stages.end(), [](Stage s) { return s == Stage::W; })) continue;
      const auto out = pp::trim_wake(epochs_from(stages));
      const auto sleep = [](const std::vector<Stage>& v) {
        return std::count_if(v.begin(), v.end(), [](Stage s) { return s != Stage::W; });
      };
      std::vector<Stage> kept;
      for (const auto& e : out) kept.push_back(e.label);
      CHECK(sleep(kept) == sleep(stages));
      for (std::size_t i = 1; i < out.size(); ++i) CHECK(out[i].epoch_index == out[i - 1].epoch_index + 1);
    }
  }
}

TEST_CASE("band-pass filter") {
  const auto sos = pp::butter_bandpass({});
  SUBCASE("design matches reference response") {
    CHECK(sos.size() == 4);
    CHECK(gain_at(sos, 0.5, 100) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-9));
    CHECK(gain_at(sos, 49, 100) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-9));
    CHECK(gain_at(sos, 1, 100) == doctest::Approx(0.99807928).epsilon(1e-7));
    CHECK(gain_at(sos, 10, 100) == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("forward-backward output matches reference values") {
    std::vector<double> x(500);
    for (std::size_t n = 0; n < x.size(); ++n) {
      const double t = n / 100.0;
      x[n] = std::sin(2 * std::numbers::pi * 0.3 * t) + 0.5 * std::sin(2 * std::numbers::pi * 7 * t) +
             0.2 * std::cos(2 * std::numbers::pi * 45 * t) + n / 1000.0;
    }
    const auto y = pp::sosfiltfilt(sos, x);
    REQUIRE(y.size() == 500);
    const std::vector<std::pair<std::size_t, double>> ref{
        {0, -0.11211971661305117}, {1, -0.2896943130239781}, {50, -0.15005223741462462},
        {249, 0.3859938175677361}, {250, -0.21629282732721886}, {498, 0.24399628367127696},
        {499, 0.07341883534311947}};
    for (const auto& [i, v] : ref) CHECK(y[i] == doctest::Approx(v).epsilon(1e-9));
  }
  SUBCASE("zero in, zero out") {
    for (double v : pp::bandpass_filter(std::vector<double>(1000, 0.0))) CHECK(v == 0.0);
  }
  SUBCASE("10 Hz passes within 1 dB on the central 8 s") {
    const auto y = pp::bandpass_filter(sine(10, 10));
    REQUIRE(y.size() == 1000);
    double peak = 0.0;
    for (std::size_t i = 100; i < 900; ++i) peak = std::max(peak, std::abs(y[i]));
    const double db = 20.0 * std::log10(peak);
    CHECK(std::abs(db) <= 1.0);
  }
  SUBCASE("DC is removed") {
    const auto y = pp::bandpass_filter(std::vector<double>(1000, 1.0));
    for (std::size_t i = 100; i < 900; ++i) CHECK(std::abs(y[i]) < 0.05);
  }
  SUBCASE("invalid band edges") {
    CHECK_THROWS_AS(pp::butter_bandpass({0.5, 60.0, 100.0, 4}), ConfigError);
    CHECK_THROWS_AS(pp::butter_bandpass({20.0, 10.0, 100.0, 4}), ConfigError);
    CHECK_THROWS_AS(pp::butter_bandpass({0.0, 10.0, 100.0, 4}), ConfigError);
  }
  SUBCASE("too-short input") { CHECK_THROWS_AS(pp::bandpass_filter(std::vector<double>(27, 1.0)), pp::PreprocessError); }
}

TEST_CASE("quantile normalization") {
  SUBCASE("hand example") {
    const auto y = pp::quantile_normalize({1, 2, 3, 4, 5});
    const std::vector<double> expected{-1, -0.5, 0, 0.5, 1};
    for (std::size_t i = 0; i < 5; ++i) CHECK(y[i] == doctest::Approx(expected[i]).epsilon(1e-15));
  }
  SUBCASE("type-7 quantiles") {
    CHECK(pp::quantile({4, 1, 3, 2}, 0.25) == doctest::Approx(1.75));
    CHECK(pp::quantile({4, 1, 3, 2}, 0.5) == doctest::Approx(2.5));
    CHECK(pp::quantile({7}, 0.75) == 7.0);
  }
  SUBCASE("median 0 and IQR 1, idempotent") {
    std::mt19937_64 rng(5);
    std::lognormal_distribution<double> d(0.0, 1.0);
    std::vector<double> x(3001);
    for (double& v : x) v = 40.0 * d(rng) - 12.0;
    const auto y = pp::quantile_normalize(x);
    CHECK(std::abs(pp::quantile(y, 0.5)) < 1e-9);
    CHECK(std::abs(pp::quantile(y, 0.75) - pp::quantile(y, 0.25) - 1.0) < 1e-9);
    const auto z = pp::quantile_normalize(y);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(z[i] - y[i]) < 1e-9);
  }
  SUBCASE("re-normalizing the pipeline output changes it by under 1e-6 RMS") {
    const auto stages = synth::stage_chain(3, 20);
    const auto clean = pp::quantile_normalize(pp::bandpass_filter(synth::synth_signal(4, stages)));
    const auto again = pp::quantile_normalize(clean);
    double ss = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) ss += (again[i] - clean[i]) * (again[i] - clean[i]);
    CHECK(std::sqrt(ss / clean.size()) < 1e-6);
  }
  SUBCASE("constant signal is rejected") {
    CHECK_THROWS_AS(pp::quantile_normalize(std::vector<double>(10, 3.0)), pp::PreprocessError);
  }
}

TEST_CASE("epoch segmentation") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> d(0.0, 20.0);
  auto noise = [&](std::size_t n) {
    std::vector<double> x(n);
    for (double& v : x) v = d(rng);
    return x;
  };
  SUBCASE("90 s with three labels gives three epochs") {
    const auto ds = pp::segment_epochs(noise(9000), {{0, 30, "Sleep stage W"}, {30, 60, "Sleep stage 1"}}, "s1");
    REQUIRE(ds.epochs.size() == 3);
    CHECK(ds.epochs[0].label == Stage::W);
    CHECK(ds.epochs[2].label == Stage::N1);
    for (const auto& e : ds.epochs) {
      CHECK(e.samples.size() == 3000);
      CHECK(e.subject_id == "s1");
    }
  }
  SUBCASE("movement epochs are dropped and neighbours keep their indices") {
    const auto ds = pp::segment_epochs(
        noise(12000),
        {{0, 30, "Sleep stage 2"}, {30, 30, "Movement time"}, {60, 30, "Sleep stage 2"}, {90, 30, "Sleep stage 3"}},
        "s2");
    REQUIRE(ds.epochs.size() == 3);
    CHECK(ds.epochs[0].epoch_index == 0);
    CHECK(ds.epochs[1].epoch_index == 2);
    CHECK(ds.epochs[2].epoch_index == 3);
  }
  SUBCASE("shorter than one epoch") {
    CHECK_THROWS_AS(pp::segment_epochs(noise(2999), {{0, 30, "Sleep stage 2"}}, "s3"), pp::PreprocessError);
  }
  SUBCASE("whole EDF pipeline on a synthetic fixture") {
    const auto stages = synth::stage_chain(21, 40);
    const auto raw = synth::synth_signal(22, stages);
    edf::Recording psg;
    psg.num_records = stages.size();
    psg.record_duration = 30;
    edf::Signal s = eeg_signal(3000, {});
    for (double v : raw) s.physical.push_back(20.0 * v);
    psg.signals.push_back(s);
    edf::Recording hyp;
    hyp.num_records = 1;
    std::string tal = std::string("+0\x14\x14", 4) + std::string(1, '\0');
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const char* names[] = {"Sleep stage W", "Sleep stage 1", "Sleep stage 2", "Sleep stage 4", "Sleep stage R"};
      tal += edf::encode_tal({30.0 * i, 30.0, names[stage_index(stages[i])]});
    }
    hyp.signals.push_back(edf::make_annotation_signal({tal}, tal.size() + tal.size() % 2));
    const auto ds = pp::preprocess_recording(edf::parse(edf::write(psg)), edf::parse_hypnogram(edf::write(hyp)), "fx");
    std::size_t lead = 0;
    while (stages[lead] == Stage::W) ++lead;
    std::size_t trail = 0;
    while (stages[stages.size() - 1 - trail] == Stage::W) ++trail;
    CHECK(ds.epochs.size() == stages.size());  // wake runs shorter than 60
    for (std::size_t i = 0; i < ds.epochs.size(); ++i) CHECK(ds.epochs[i].label == stages[ds.epochs[i].epoch_index]);
  }
}

TEST_CASE("synthetic datasets") {
  SUBCASE("same seed gives identical data") {
    const auto a = synth::synth_dataset(9, 2, 30);
    const auto b = synth::synth_dataset(9, 2, 30);
    CHECK(encode_cache(a[0]) == encode_cache(b[0]));
    CHECK(encode_cache(a[1]) == encode_cache(b[1]));
    CHECK(encode_cache(a[0]) != encode_cache(synth::synth_dataset(10, 1, 30)[0]));
  }
  SUBCASE("4 subjects x 100 epochs covers every class") {
    const auto ds = synth::synth_dataset(7, 4, 100);
    REQUIRE(ds.size() == 4);
    std::set<Stage> seen;
    std::size_t total = 0;
    for (const auto& s : ds) {
      total += s.epochs.size();
      for (const auto& e : s.epochs) {
        CHECK(e.samples.size() == 3000);
        seen.insert(e.label);
      }
    }
    CHECK(total == 400);
    CHECK(seen.size() == 5);
  }
  SUBCASE("transition fraction over 10^4 epochs") {
    const auto stages = synth::stage_chain(123, 10000);
    const double frac = static_cast<double>(count_transitions(stages)) / 10000.0;
    CHECK(frac >= 0.10);
    CHECK(frac <= 0.45);
    CHECK(frac == doctest::Approx(1.0 - 0.85 * 0.85).epsilon(0.1));
  }
}

TEST_CASE("dataset cache") {
  const auto ds = synth::synth_dataset(4, 1, 12)[0];
  SUBCASE("round trip preserves samples, labels and indices") {
    SubjectDataset gap = ds;
    gap.epochs.erase(gap.epochs.begin() + 5);
    const auto path = std::filesystem::temp_directory_path() / "transsleep_cache_test.tsds";
    write_cache(path, gap);
    const SubjectDataset back = read_cache(path);
    std::filesystem::remove(path);
    CHECK(back.subject_id == "transsleep_cache_test");
    REQUIRE(back.epochs.size() == 11);
    CHECK(back.epochs[5].epoch_index == 6);
    for (std::size_t i = 0; i < 11; ++i) {
      CHECK(back.epochs[i].label == gap.epochs[i].label);
      CHECK(back.epochs[i].samples == gap.epochs[i].samples);
    }
  }
  SUBCASE("base layout without the index block") {
    auto bytes = encode_cache(ds);
    CHECK(bytes.size() == 4 + 4 + 12 * (1 + 4 * 3000) + 4 + 4 * 12);
    bytes.resize(4 + 4 + 12 * (1 + 4 * 3000));
    const auto back = decode_cache(bytes, "x");
    CHECK(back.epochs[11].epoch_index == 11);
  }
  SUBCASE("corruption is detected") {
    auto bytes = encode_cache(ds);
    bytes[0] = 'X';
    CHECK_THROWS_AS(decode_cache(bytes, "x"), CacheError);
    bytes = encode_cache(ds);
    bytes[8] = 9;
    CHECK_THROWS_AS(decode_cache(bytes, "x"), CacheError);
    bytes = encode_cache(ds);
    bytes.resize(100);
    CHECK_THROWS_AS(decode_cache(bytes, "x"), CacheError);
  }
}
