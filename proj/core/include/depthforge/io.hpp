#pragma once

// File formats.
//
//   Match file (one frame pair):
//     PAIR <pair_id> <width> <height> <n_matches>
//     <x1> <y1> <x2> <y2>          (n lines; correspondence id = line index)
//
//   Everything else is JSON, one object per line where records are streamed.
//   Floating-point values are written in shortest round-trip form, so
//   write -> read reproduces every double bit-exactly.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "depthforge/cues.hpp"
#include "depthforge/geometry.hpp"
#include "depthforge/pipeline.hpp"
#include "depthforge/qanet.hpp"
#include "depthforge/synth.hpp"

namespace depthforge {

FramePair parse_match_file(std::istream& in);
FramePair read_match_file(const std::filesystem::path& path);
void write_match_file(std::ostream& out, const FramePair& pair);

std::string reconstruction_to_json(const Reconstruction& r);
Reconstruction reconstruction_from_json(std::string_view line);

std::string ground_truth_to_json(const GroundTruth& gt);
GroundTruth ground_truth_from_json(std::string_view text);

std::string scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(std::string_view text);

std::string cues_to_json(const CueVector& cv, std::optional<double> quality = std::nullopt);
struct ParsedCues {
  CueVector cues;
  std::optional<double> quality;
};
ParsedCues cues_from_json(std::string_view line);

std::string model_to_json(const QaModel& model);
QaModel model_from_json(std::string_view text);

std::string dataset_record_to_json(const DatasetRecord& rec);
DatasetRecord dataset_record_from_json(std::string_view line);

std::string report_to_json(const PipelineReport& report);

std::string train_log_csv(const std::vector<TrainLogRow>& log);

/// Every tunable knob, grouped the way the `--config` JSON file is:
///   { "sfm": {...}, "train": {...}, "arch": {...}, "recipe": {...},
///     "pipeline": {...}, "quality_margin": 1.02 }
/// Keys that are absent keep their defaults; unknown keys are an error.
struct Settings {
  SfmConfig sfm;
  TrainConfig train;
  QaArch arch;
  CorpusRecipe recipe;
  PipelineConfig pipeline;
  double quality_margin = 1.02;
};

void apply_config_json(std::string_view text, Settings& settings);

/// Reads all non-empty lines of a text file.
std::vector<std::string> read_lines(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

}  // namespace depthforge
