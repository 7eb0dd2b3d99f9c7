#include "transsleep/dataset.hpp"

#include "binary_io.hpp"

namespace transsleep {

namespace {
constexpr std::array<std::string_view, kNumStages> kNames{"W", "N1", "N2", "N3", "REM"};
}

std::string_view stage_name(Stage s) { return kNames.at(stage_index(s)); }

std::optional<Stage> stage_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumStages; ++i) {
    if (kNames[i] == name) return kAllStages[i];
  }
  return std::nullopt;
}

std::array<std::size_t, kNumStages> SubjectDataset::class_counts() const {
  std::array<std::size_t, kNumStages> counts{};
  for (const auto& e : epochs) ++counts[stage_index(e.label)];
  return counts;
}

std::vector<std::uint8_t> encode_cache(const SubjectDataset& ds) {
  io::ByteWriter w;
  w.bytes("TSDS");
  w.u32(static_cast<std::uint32_t>(ds.epochs.size()));
  for (const auto& e : ds.epochs) {
    if (e.samples.size() != kEpochSamples) {
      throw CacheError("epoch " + std::to_string(e.epoch_index) + " has " + std::to_string(e.samples.size()) +
                       " samples, expected 3000");
    }
    w.u8(static_cast<std::uint8_t>(e.label));
    for (float v : e.samples) w.f32(v);
  }
  w.bytes("IDX1");
  for (const auto& e : ds.epochs) w.u32(static_cast<std::uint32_t>(e.epoch_index));
  return std::move(w.buffer());
}

SubjectDataset decode_cache(const std::vector<std::uint8_t>& bytes, const std::string& subject_id) {
  try {
    io::ByteReader r(bytes);
    if (r.bytes(4, "magic") != "TSDS") throw CacheError("not a dataset cache (bad magic)");
    const std::uint32_t count = r.u32("epoch count");
    SubjectDataset ds;
    ds.subject_id = subject_id;
    ds.epochs.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      EpochRecord& e = ds.epochs[i];
      const std::uint8_t label = r.u8("label");
      if (label >= kNumStages) {
        throw CacheError("invalid label " + std::to_string(label) + " at byte " + std::to_string(r.offset() - 1));
      }
      e.label = static_cast<Stage>(label);
      e.subject_id = subject_id;
      e.epoch_index = i;
      e.samples.resize(kEpochSamples);
      for (float& v : e.samples) v = r.f32("samples");
    }
    if (!r.done()) {
      if (r.bytes(4, "index block") != "IDX1") throw CacheError("unexpected trailing data in dataset cache");
      for (auto& e : ds.epochs) e.epoch_index = r.u32("epoch index");
      if (!r.done()) throw CacheError("unexpected trailing data in dataset cache");
    }
    return ds;
  } catch (const CacheError&) {
    throw;
  } catch (const std::runtime_error& err) {
    throw CacheError(err.what());
  }
}

void write_cache(const std::filesystem::path& path, const SubjectDataset& ds) {
  io::write_file(path, encode_cache(ds));
}

SubjectDataset read_cache(const std::filesystem::path& path) {
  return decode_cache(io::read_file(path), path.stem().string());
}

}  // namespace transsleep
