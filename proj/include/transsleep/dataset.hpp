#pragma once
// Labeled 30-s epochs and the per-subject cache file.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace transsleep {

enum class Stage : std::uint8_t { W = 0, N1 = 1, N2 = 2, N3 = 3, REM = 4 };

inline constexpr std::size_t kNumStages = 5;
inline constexpr std::size_t kEpochSamples = 3000;  // 30 s at 100 Hz
inline constexpr std::array<Stage, kNumStages> kAllStages{Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::REM};

std::string_view stage_name(Stage s);
// Accepts the short names produced by stage_name.
std::optional<Stage> stage_from_name(std::string_view name);
inline std::size_t stage_index(Stage s) { return static_cast<std::size_t>(s); }

struct EpochRecord {
  std::vector<float> samples;  // kEpochSamples values
  Stage label = Stage::W;
  std::string subject_id;
  // Position of the epoch in the original recording. Discarded epochs leave
  // gaps, so consecutive records are adjacent only when indices differ by 1.
  std::size_t epoch_index = 0;
};

struct SubjectDataset {
  std::string subject_id;
  std::vector<EpochRecord> epochs;

  std::array<std::size_t, kNumStages> class_counts() const;
};

class CacheError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// "TSDS", u32 count, then per epoch a u8 label and 3000 f32 samples. The
// writer appends an "IDX1" block with one u32 epoch index per record; files
// without it load with indices 0..count-1.
std::vector<std::uint8_t> encode_cache(const SubjectDataset& ds);
SubjectDataset decode_cache(const std::vector<std::uint8_t>& bytes, const std::string& subject_id);
void write_cache(const std::filesystem::path& path, const SubjectDataset& ds);
// The subject id is the file stem.
SubjectDataset read_cache(const std::filesystem::path& path);

}  // namespace transsleep
