#pragma once
// Signal conditioning and epoch segmentation. Pipeline order: band-pass
// filter, quantile normalization over the whole recording, 30-s
// segmentation, label mapping with discards, wake trimming.

#include <filesystem>
#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "transsleep/dataset.hpp"
#include "transsleep/edf.hpp"
#include "transsleep/tensor.hpp"

namespace transsleep::preprocess {

class PreprocessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One biquad: b0 b1 b2 / a0 a1 a2 with a0 == 1.
using Section = std::array<double, 6>;

struct FilterConfig {
  double low_hz = 0.5;
  double high_hz = 49.0;
  double fs = 100.0;
  int order = 4;  // low-pass prototype order; the band-pass has 2*order poles
};

// Digital Butterworth band-pass as second-order sections (bilinear
// transform with pre-warped edges). Throws ConfigError for invalid edges.
std::vector<Section> butter_bandpass(const FilterConfig& cfg);
// Single forward pass with explicit initial conditions (2 per section).
std::vector<double> sosfilt(const std::vector<Section>& sos, const std::vector<double>& x,
                            std::vector<double>* state = nullptr);
// Steady-state initial conditions for a unit step input.
std::vector<double> sosfilt_zi(const std::vector<Section>& sos);
// Forward-backward filtering with odd extension of 3 * (2 * sections + 1)
// samples at both ends.
std::vector<double> sosfiltfilt(const std::vector<Section>& sos, const std::vector<double>& x);
std::vector<double> bandpass_filter(const std::vector<double>& signal, const FilterConfig& cfg = {});

// Linear interpolation between order statistics (type 7).
double quantile(std::vector<double> values, double q);
// (x - median) / IQR. Throws PreprocessError when IQR is zero.
std::vector<double> quantile_normalize(const std::vector<double>& signal);

// Keeps at most max_wake W epochs before the first and after the last
// non-W epoch; interior wake is untouched. Throws when no sleep epoch exists.
std::vector<EpochRecord> trim_wake(std::vector<EpochRecord> epochs, std::size_t max_wake = 60);

struct PipelineConfig {
  FilterConfig filter;
  std::string channel = "EEG Fpz-Cz";
  double epoch_seconds = 30.0;
  std::size_t max_wake_epochs = 60;
  bool per_epoch_normalization = false;
};

// Runs the whole pipeline on one raw physical-unit channel sampled at
// cfg.filter.fs. Epochs without a covering annotation are dropped like
// discards; retained epochs keep their original epoch_index.
SubjectDataset segment_epochs(const std::vector<double>& signal, const std::vector<edf::Annotation>& annotations,
                              const std::string& subject_id, const PipelineConfig& cfg = {});
// Full pipeline on a parsed PSG recording and its hypnogram annotations.
SubjectDataset preprocess_recording(const edf::Recording& psg, const std::vector<edf::Annotation>& annotations,
                                    const std::string& subject_id, const PipelineConfig& cfg = {});

struct RecordingPair {
  std::string id;  // PSG stem, e.g. SC4001E0
  std::filesystem::path psg, hypnogram;
};
struct RecordingScan {
  std::vector<RecordingPair> pairs;  // sorted by id
  std::vector<std::filesystem::path> unpaired;
};
// Pairs X-PSG.edf with Y-Hypnogram.edf when the stems X and Y agree up to
// their last character (SC4001E0 / SC4001EC).
RecordingScan find_recordings(const std::filesystem::path& dir);

}  // namespace transsleep::preprocess
