#include "transsleep/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>

#include "transsleep/preprocess.hpp"

namespace transsleep::synth {

namespace {

constexpr double kFs = 100.0;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct Tone {
  double freq, amp, phase;
};

// Rhythm of one stage over `n` samples starting at local time 0.
class StageRhythm {
 public:
  StageRhythm(Stage stage, std::mt19937_64& rng) : stage_(stage) {
    std::uniform_real_distribution<double> jitter(0.92, 1.08), gain(0.8, 1.2), phase(0.0, kTwoPi);
    auto tone = [&](double f, double a) { tones_.push_back({f * jitter(rng), a * gain(rng), phase(rng)}); };
    switch (stage) {
      case Stage::W:
        tone(10.0, 1.0);
        tone(21.0, 0.3);
        break;
      case Stage::N1:
        tone(6.0, 0.9);
        tone(2.5, 0.3);
        break;
      case Stage::N2: {
        tone(4.5, 0.5);
        std::uniform_real_distribution<double> center(2.0, 28.0);
        spindles_ = {center(rng), center(rng)};
        spindle_freq_ = 13.0 * jitter(rng);
        spindle_amp_ = 1.5 * gain(rng);
        break;
      }
      case Stage::N3:
        tone(1.5, 2.5);
        tone(0.8, 0.8);
        break;
      case Stage::REM:
        tone(3.0, 0.7);
        tone(6.0, 0.35);
        tone(9.0, 0.23);
        tone(18.0, 0.4);
        break;
    }
  }

  double at(double t) const {
    double v = 0.0;
    for (const Tone& tone : tones_) v += tone.amp * std::sin(kTwoPi * tone.freq * t + tone.phase);
    if (stage_ == Stage::N2) {
      for (double c : spindles_) {
        const double d = (t - c) / 0.35;
        v += spindle_amp_ * std::exp(-0.5 * d * d) * std::sin(kTwoPi * spindle_freq_ * t);
      }
    }
    return v;
  }

 private:
  Stage stage_;
  std::vector<Tone> tones_;
  std::vector<double> spindles_;
  double spindle_freq_ = 0.0, spindle_amp_ = 0.0;
};

}  // namespace

std::vector<Stage> stage_chain(std::uint64_t seed, std::size_t length, double self_transition) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> start(0, kNumStages - 1), other(1, kNumStages - 1);
  std::vector<Stage> out;
  out.reserve(length);
  std::size_t s = start(rng);
  for (std::size_t i = 0; i < length; ++i) {
    if (i > 0 && u(rng) >= self_transition) s = (s + other(rng)) % kNumStages;
    out.push_back(kAllStages[s]);
  }
  return out;
}

std::vector<double> synth_signal(std::uint64_t seed, const std::vector<Stage>& stages, const SynthConfig& cfg) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, cfg.noise_std);
  std::uniform_real_distribution<double> blend(0.1, cfg.max_blend);
  std::vector<double> signal;
  signal.reserve(stages.size() * kEpochSamples);
  for (std::size_t e = 0; e < stages.size(); ++e) {
    const StageRhythm own(stages[e], rng);
    std::size_t head = 0, tail = kEpochSamples;
    std::optional<StageRhythm> before, after;
    if (e > 0 && stages[e - 1] != stages[e]) {
      before.emplace(stages[e - 1], rng);
      head = static_cast<std::size_t>(blend(rng) * kEpochSamples);
    }
    if (e + 1 < stages.size() && stages[e + 1] != stages[e]) {
      after.emplace(stages[e + 1], rng);
      tail = kEpochSamples - static_cast<std::size_t>(blend(rng) * kEpochSamples);
    }
    for (std::size_t i = 0; i < kEpochSamples; ++i) {
      const double t = static_cast<double>(i) / kFs;
      double v = own.at(t);
      if (i < head) {
        v = before->at(t);
      } else if (i >= tail) {
        v = after->at(t);
      }
      signal.push_back(v + noise(rng));
    }
  }
  return signal;
}

std::vector<SubjectDataset> synth_dataset(std::uint64_t seed, std::size_t n_subjects, std::size_t epochs_per_subject,
                                          const SynthConfig& cfg) {
  std::vector<SubjectDataset> out;
  for (std::size_t s = 0; s < n_subjects; ++s) {
    const std::vector<Stage> stages = stage_chain(mix(seed, 2 * s), epochs_per_subject, cfg.self_transition);
    const std::vector<double> clean =
        preprocess::quantile_normalize(preprocess::bandpass_filter(synth_signal(mix(seed, 2 * s + 1), stages, cfg)));
    SubjectDataset ds;
    ds.subject_id = "synth" + std::string(s < 10 ? "0" : "") + std::to_string(s);
    for (std::size_t e = 0; e < stages.size(); ++e) {
      EpochRecord rec;
      rec.samples.assign(clean.begin() + static_cast<std::ptrdiff_t>(e * kEpochSamples),
                         clean.begin() + static_cast<std::ptrdiff_t>((e + 1) * kEpochSamples));
      rec.label = stages[e];
      rec.subject_id = ds.subject_id;
      rec.epoch_index = e;
      ds.epochs.push_back(std::move(rec));
    }
    out.push_back(std::move(ds));
  }
  return out;
}

EdfPair synth_edf_pair(std::uint64_t seed, std::size_t epochs, const SynthConfig& cfg) {
  EdfPair out;
  out.stages = stage_chain(mix(seed, 0), epochs, cfg.self_transition);
  const std::vector<double> raw = synth_signal(mix(seed, 1), out.stages, cfg);

  edf::Recording psg;
  psg.patient = "X X X X";
  psg.recording_id = "Startdate X X X X";
  psg.num_records = epochs;
  psg.record_duration = 30.0;
  edf::Signal eeg;
  eeg.label = "EEG Fpz-Cz";
  eeg.physical_dimension = "uV";
  eeg.physical_min = -250.0;
  eeg.physical_max = 250.0;
  eeg.digital_min = -2048;
  eeg.digital_max = 2047;
  eeg.samples_per_record = kEpochSamples;
  eeg.physical.reserve(raw.size());
  for (double v : raw) eeg.physical.push_back(std::clamp(20.0 * v, -250.0, 250.0));
  psg.signals.push_back(std::move(eeg));
  out.psg = edf::write(psg);

  static const char* names[] = {"Sleep stage W", "Sleep stage 1", "Sleep stage 2", "Sleep stage 3", "Sleep stage R"};
  std::string tal = std::string("+0\x14\x14", 4) + std::string(1, '\0');
  // Runs of equal stages become one annotation, as in scored hypnograms.
  for (std::size_t i = 0; i < epochs;) {
    std::size_t j = i;
    while (j < epochs && out.stages[j] == out.stages[i]) ++j;
    tal += edf::encode_tal({30.0 * static_cast<double>(i), 30.0 * static_cast<double>(j - i),
                            names[stage_index(out.stages[i])]});
    i = j;
  }
  edf::Recording hyp;
  hyp.patient = psg.patient;
  hyp.recording_id = psg.recording_id;
  hyp.reserved = "EDF+C";
  hyp.num_records = 1;
  hyp.record_duration = 0.0;
  hyp.signals.push_back(edf::make_annotation_signal({tal}, tal.size() + tal.size() % 2));
  out.hypnogram = edf::write(hyp);
  return out;
}

}  // namespace transsleep::synth
