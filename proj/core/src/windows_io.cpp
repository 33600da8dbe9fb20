#include "engage/windows_io.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "engage/config.hpp"
#include "engage/error.hpp"
#include "engage/text.hpp"

namespace engage::preprocess {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagicLine = "# engage-windows v1";
constexpr std::size_t kFixedColumns = 7;

std::string header_row() {
  std::string h = "participant_id\tt_start\tlabel\tt_level\te_mean\tframe_first\tframe_count";
  for (std::size_t k = 0; k < kGamepadFeatureCount; ++k) {
    h += k < 10 ? "\tg0" : "\tg";
    h += std::to_string(k);
  }
  return h;
}

}  // namespace

std::string format_windows(const WindowsFile& file) {
  std::ostringstream os;
  os << kMagicLine << '\n';
  os << "# corpus = " << file.corpus.string() << '\n';
  os << "# window_s = " << text::format_double(file.spec.window_s) << '\n';
  os << "# stride_s = " << text::format_double(file.spec.stride_s) << '\n';
  os << "# stimulus_shift_s = " << text::format_double(file.spec.stimulus_shift_s) << '\n';
  os << "# frame_fps = " << text::format_double(file.spec.frame_fps) << '\n';
  os << "# trace_hz = " << text::format_double(file.spec.trace_hz) << '\n';
  os << "# epsilon = " << text::format_double(file.spec.epsilon) << '\n';
  os << header_row() << '\n';
  for (const auto& w : file.windows) {
    os << w.participant_id << '\t' << text::format_double(w.t_start) << '\t' << to_string(w.label) << '\t'
       << w.t_level << '\t' << text::format_double(w.e_mean) << '\t' << w.frames.first << '\t'
       << w.frames.in_window;
    for (double g : w.gamepad) os << '\t' << text::format_double(g);
    os << '\n';
  }
  return os.str();
}

void write_windows(const WindowsFile& file, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << format_windows(file);
  if (!out) throw DataError("write failed: " + path.string());
}

WindowsFile read_windows(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagicLine) {
    throw DataError(path.string() + ": not a windows file (bad first line)");
  }

  std::string meta;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.rfind("# ", 0) != 0) break;
    meta += line.substr(2) + '\n';
  }
  const auto kv = KeyValueConfig::parse(meta, path.string());
  WindowsFile file;
  file.corpus = kv.get_string("corpus");
  file.spec.window_s = kv.get_double("window_s");
  file.spec.stride_s = kv.get_double("stride_s");
  file.spec.stimulus_shift_s = kv.get_double("stimulus_shift_s");
  file.spec.frame_fps = kv.get_double("frame_fps");
  file.spec.trace_hz = kv.get_double("trace_hz");
  file.spec.epsilon = kv.get_double("epsilon");
  if (line != header_row()) throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad column header");

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto f = text::split(line, '\t');
    if (f.size() != kFixedColumns + kGamepadFeatureCount) {
      throw DataError(where + ": expected " + std::to_string(kFixedColumns + kGamepadFeatureCount) + " fields, got " +
                      std::to_string(f.size()));
    }
    LabeledWindow w;
    w.participant_id = std::string(f[0]);
    if (w.participant_id.empty()) throw DataError(where + ": empty participant id");
    w.t_start = text::parse_double(f[1], where + " t_start");
    try {
      w.label = parse_label(f[2]);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    w.t_level = static_cast<int>(text::parse_int(f[3], where + " t_level"));
    if (w.t_level < 1 || w.t_level > 3) throw DataError(where + ": t_level must be 1, 2 or 3");
    w.e_mean = text::parse_double(f[4], where + " e_mean");
    const auto first = text::parse_int(f[5], where + " frame_first");
    const auto count = text::parse_int(f[6], where + " frame_count");
    if (first < 0 || count < 1 || first > 0xffffffffLL || count > 0xffffffffLL) {
      throw DataError(where + ": bad frame reference");
    }
    w.frames.first = static_cast<std::uint32_t>(first);
    w.frames.in_window = static_cast<std::uint32_t>(count);
    for (std::size_t k = 0; k < kGamepadFeatureCount; ++k) {
      w.gamepad[k] = text::parse_double(f[kFixedColumns + k], where + " gamepad feature");
      if (w.gamepad[k] < 0.0) throw DataError(where + ": negative gamepad feature");
    }
    file.windows.push_back(std::move(w));
  }
  return file;
}

void attach_pooled_frames(std::vector<LabeledWindow>& windows, const fs::path& corpus_dir) {
  std::map<std::string, fs::path> features_of;
  for (const auto& manifest : corpus::list_sessions(corpus_dir)) {
    const auto kv = KeyValueConfig::load(manifest);
    fs::path p = kv.get_string("features");
    features_of[kv.get_string("participant_id")] = p.is_absolute() ? p : manifest.parent_path() / p;
  }
  std::map<std::string, std::vector<LabeledWindow*>> by_participant;
  for (auto& w : windows) by_participant[w.participant_id].push_back(&w);
  for (auto& [id, list] : by_participant) {
    auto it = features_of.find(id);
    if (it == features_of.end()) throw DataError("no session for participant " + id + " in " + corpus_dir.string());
    const auto stream = corpus::read_feature_file(it->second);
    for (auto* w : list) w->pooled_frames = pool_selection(stream, w->frames);
  }
}

}  // namespace engage::preprocess
