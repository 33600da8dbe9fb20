#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "engage/preprocess.hpp"

namespace engage::preprocess {

/// Text file with one row per labeled window. Frame features are stored by
/// reference (first record index and in-window count into the session's
/// feature container) and re-pooled on load.
struct WindowsFile {
  std::filesystem::path corpus;  // directory holding the session folders
  WindowSpec spec;
  std::vector<LabeledWindow> windows;
};

std::string format_windows(const WindowsFile& file);
void write_windows(const WindowsFile& file, const std::filesystem::path& path);
/// Parses the file; `pooled_frames` stays empty until attach_pooled_frames.
WindowsFile read_windows(const std::filesystem::path& path);

/// Fills `pooled_frames` of every window from the feature files of the
/// corpus sessions, matched by participant id.
void attach_pooled_frames(std::vector<LabeledWindow>& windows, const std::filesystem::path& corpus_dir);

}  // namespace engage::preprocess
