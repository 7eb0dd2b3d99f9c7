#pragma once
// Seeded synthetic sleep recordings with stage-specific rhythms.

#include <cstdint>
#include <vector>

#include "transsleep/dataset.hpp"
#include "transsleep/edf.hpp"

namespace transsleep::synth {

struct SynthConfig {
  double self_transition = 0.85;
  double noise_std = 0.35;
  // Transitioning epochs carry up to this fraction of the neighbouring
  // stage's rhythm at the shared boundary.
  double max_blend = 0.4;
};

// Stage sequence of one subject: a Markov chain with the given
// self-transition probability and uniform jumps to the other stages.
std::vector<Stage> stage_chain(std::uint64_t seed, std::size_t length, double self_transition = 0.85);

// Raw (unfiltered) 100 Hz signal for a stage sequence.
std::vector<double> synth_signal(std::uint64_t seed, const std::vector<Stage>& stages, const SynthConfig& cfg = {});

// n_subjects recordings of epochs_per_subject epochs each, filtered and
// quantile-normalized like real data. Subject ids are "synth00", "synth01", ...
std::vector<SubjectDataset> synth_dataset(std::uint64_t seed, std::size_t n_subjects, std::size_t epochs_per_subject,
                                          const SynthConfig& cfg = {});

struct EdfPair {
  std::vector<std::uint8_t> psg;        // one "EEG Fpz-Cz" channel, 30-s records
  std::vector<std::uint8_t> hypnogram;  // EDF+ with one TAL per run of equal stages
  std::vector<Stage> stages;
};

// Sleep-EDF-shaped recording of `epochs` epochs (signal in microvolts).
EdfPair synth_edf_pair(std::uint64_t seed, std::size_t epochs, const SynthConfig& cfg = {});

}  // namespace transsleep::synth
