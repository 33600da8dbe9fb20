#include "engage/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "engage/config.hpp"
#include "engage/error.hpp"
#include "engage/text.hpp"

namespace engage::corpus {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'E', 'N', 'G', 'F', 'E', 'A', 'T', '1'};
constexpr std::string_view kNoKey = "nokey";

// Real corpus sessions run 53 to 65 minutes.
constexpr double kMinCorpusDuration = 53.0 * 60.0;
constexpr double kMaxCorpusDuration = 65.0 * 60.0;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::ofstream open_for_write(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

template <typename T>
void put_le(std::vector<char>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get_le(const char* p) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

// ---------------------------------------------------------------- vocabulary

ActionVocabulary::ActionVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.size() != kActionCount) {
    throw DataError("action vocabulary must have exactly 25 entries, got " + std::to_string(names_.size()));
  }
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty() || n == kNoKey || n.find_first_of("+\t\n ") != std::string::npos) {
      throw DataError("invalid action name '" + n + "'");
    }
    if (!seen.insert(n).second) throw DataError("duplicate action name '" + n + "'");
  }
}

const ActionVocabulary& ActionVocabulary::standard() {
  static const ActionVocabulary vocab({
      "btn_a",      "btn_b",       "btn_x",        "btn_y",         "btn_lb",
      "btn_rb",     "btn_lt",      "btn_rt",       "btn_back",      "btn_start",
      "btn_guide",  "btn_ls",      "btn_rs",       "dpad_up",       "dpad_down",
      "dpad_left",  "dpad_right",  "lstick_up",    "lstick_down",   "lstick_left",
      "lstick_right", "rstick_up", "rstick_down",  "rstick_left",   "rstick_right",
  });
  return vocab;
}

std::optional<std::size_t> ActionVocabulary::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- gamepad log

std::vector<GamepadEvent> parse_gamepad_log(std::string_view text, const std::string& origin,
                                            const ActionVocabulary& vocab) {
  std::vector<GamepadEvent> events;
  std::size_t line_no = 0;
  double prev_t = -std::numeric_limits<double>::infinity();
  for (auto raw : text::split(text, '\n')) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    if (text::trim(raw).empty()) continue;
    const auto where = origin + ":" + std::to_string(line_no);
    const auto tab = raw.find('\t');
    if (tab == std::string_view::npos) throw DataError(where + ": malformed record (expected t<TAB>actions)");

    GamepadEvent ev;
    ev.t = text::parse_double(raw.substr(0, tab), where + " timestamp");
    if (!std::isfinite(ev.t) || ev.t < 0.0) throw DataError(where + ": negative or non-finite timestamp");
    if (ev.t < prev_t) throw DataError(where + ": timestamps decrease");
    prev_t = ev.t;

    const auto actions = text::trim(raw.substr(tab + 1));
    if (actions.empty()) throw DataError(where + ": malformed record (no actions; use 'nokey')");
    if (actions != kNoKey) {
      for (auto name : text::split(actions, '+')) {
        const auto idx = vocab.index_of(name);
        if (!idx) throw DataError(where + ": vocabulary mismatch: unknown action '" + std::string(name) + "'");
        ev.pressed.push_back(static_cast<std::uint8_t>(*idx));
      }
      std::sort(ev.pressed.begin(), ev.pressed.end());
      if (std::adjacent_find(ev.pressed.begin(), ev.pressed.end()) != ev.pressed.end()) {
        throw DataError(where + ": action repeated within one record");
      }
      if (ev.pressed.size() > kMaxComboSize) throw DataError(where + ": more than 6 simultaneous actions");
    }
    events.push_back(std::move(ev));
  }
  return events;
}

std::vector<GamepadEvent> read_gamepad_log(const fs::path& path, const ActionVocabulary& vocab) {
  return parse_gamepad_log(read_text(path), path.string(), vocab);
}

void write_gamepad_log(const std::vector<GamepadEvent>& events, const fs::path& path,
                       const ActionVocabulary& vocab) {
  std::string out;
  out.reserve(events.size() * 16);
  for (const auto& ev : events) {
    out += text::format_double(ev.t);
    out += '\t';
    if (ev.pressed.empty()) {
      out += kNoKey;
    } else {
      for (std::size_t i = 0; i < ev.pressed.size(); ++i) {
        if (i) out += '+';
        out += vocab.name(ev.pressed[i]);
      }
    }
    out += '\n';
  }
  open_for_write(path, std::ios::binary) << out;
}

// ---------------------------------------------------------------- trace

EngagementTrace read_trace(const fs::path& path, double speed_factor) {
  const auto content = read_text(path);
  EngagementTrace trace;
  trace.speed_factor = speed_factor;
  if (!(speed_factor > 0.0)) throw DataError(path.string() + ": annotation speed must be positive");
  std::size_t line_no = 0;
  bool header_seen = false;
  for (auto raw : text::split(content, '\n')) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    if (text::trim(raw).empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (!header_seen) {
      if (text::trim(raw) != "t,v") throw DataError(where + ": expected header 't,v'");
      header_seen = true;
      continue;
    }
    const auto cols = text::split(raw, ',');
    if (cols.size() != 2) throw DataError(where + ": malformed record (expected 2 columns)");
    const double t = text::parse_double(cols[0], where + " t");
    const double v = text::parse_double(cols[1], where + " v");
    if (!std::isfinite(t) || !std::isfinite(v)) throw DataError(where + ": non-finite value");
    if (!trace.t.empty() && t <= trace.t.back()) throw DataError(where + ": trace timestamps must strictly increase");
    trace.t.push_back(t);
    trace.v.push_back(v);
  }
  if (trace.size() < 2) throw DataError(path.string() + ": trace needs at least 2 samples");
  return trace;
}

void write_trace(const EngagementTrace& trace, const fs::path& path) {
  std::string out = "t,v\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out += text::format_double(trace.t[i]);
    out += ',';
    out += text::format_double(trace.v[i]);
    out += '\n';
  }
  open_for_write(path, std::ios::binary) << out;
}

// ---------------------------------------------------------------- features

std::vector<char> encode_feature_file(const FrameFeatureStream& s) {
  if (s.data.size() != static_cast<std::size_t>(s.frame_count) * s.record_size()) {
    throw DataError("feature stream payload does not match its shape");
  }
  std::vector<char> out;
  out.reserve(kFeatureHeaderBytes + s.data.size() * 4);
  out.insert(out.end(), kMagic, kMagic + 8);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.layout));
  put_le<std::uint32_t>(out, s.frame_count);
  put_le<std::uint32_t>(out, s.channels);
  put_le<std::uint32_t>(out, s.height);
  put_le<std::uint32_t>(out, s.width);
  put_le<double>(out, s.fps);
  if constexpr (std::endian::native == std::endian::little) {
    const auto* p = reinterpret_cast<const char*>(s.data.data());
    out.insert(out.end(), p, p + s.data.size() * sizeof(float));
  } else {
    for (float f : s.data) put_le<float>(out, f);
  }
  return out;
}

FrameFeatureStream decode_feature_file(std::span<const char> bytes, const std::string& origin) {
  if (bytes.size() < kFeatureHeaderBytes) throw DataError(origin + ": truncated header");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw DataError(origin + ": bad magic (not an ENGFEAT1 file)");
  FrameFeatureStream s;
  const char* p = bytes.data() + 8;
  const auto layout = get_le<std::uint32_t>(p);
  if (layout != 1 && layout != 2) throw DataError(origin + ": unknown layout tag " + std::to_string(layout));
  s.layout = static_cast<FrameLayout>(layout);
  s.frame_count = get_le<std::uint32_t>(p + 4);
  s.channels = get_le<std::uint32_t>(p + 8);
  s.height = get_le<std::uint32_t>(p + 12);
  s.width = get_le<std::uint32_t>(p + 16);
  s.fps = get_le<double>(p + 20);
  if (s.channels == 0 || s.height == 0 || s.width == 0) throw DataError(origin + ": zero dimension");
  if (s.layout == FrameLayout::kVectors && (s.height != 1 || s.width != 1)) {
    throw DataError(origin + ": VECTORS layout requires H = W = 1");
  }
  if (!(s.fps > 0.0) || !std::isfinite(s.fps)) throw DataError(origin + ": fps must be positive");

  // Dimension product must fit the address space before comparing sizes.
  const std::size_t limit = std::numeric_limits<std::size_t>::max() / sizeof(float);
  std::size_t n = 1;
  for (std::uint32_t dim : {s.frame_count, s.channels, s.height, s.width}) {
    if (dim != 0 && n > limit / dim) throw DataError(origin + ": dimension overflow");
    n *= dim;
  }
  const auto payload = bytes.size() - kFeatureHeaderBytes;
  if (payload < n * sizeof(float)) {
    throw DataError(origin + ": truncated payload: header declares " + std::to_string(s.frame_count) +
                    " frames, file holds " + std::to_string(payload / (s.record_size() * sizeof(float))));
  }
  if (payload > n * sizeof(float)) throw DataError(origin + ": trailing bytes after payload");
  s.data.resize(n);
  const char* q = bytes.data() + kFeatureHeaderBytes;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(s.data.data(), q, n * sizeof(float));
  } else {
    for (std::size_t i = 0; i < n; ++i) s.data[i] = get_le<float>(q + 4 * i);
  }
  return s;
}

void write_feature_file(const FrameFeatureStream& stream, const fs::path& path) {
  const auto bytes = encode_feature_file(stream);
  auto out = open_for_write(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("I/O failure writing " + path.string());
}

FrameFeatureStream read_feature_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file: " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<char> bytes(size);
  in.read(bytes.data(), static_cast<std::streamsize>(size));
  if (!in) throw DataError("I/O failure reading " + path.string());
  return decode_feature_file(bytes, path.string());
}

// ---------------------------------------------------------------- sessions

std::vector<std::string> validate_session(const Session& s) {
  std::vector<std::string> warnings;
  const auto who = "session '" + s.participant_id + "'";
  if (s.participant_id.empty()) throw DataError("session without participant id");
  if (!(s.duration_s > 0.0) || !std::isfinite(s.duration_s)) throw DataError(who + ": duration must be positive");
  if (s.duration_s < kMinCorpusDuration || s.duration_s > kMaxCorpusDuration) {
    warnings.push_back(who + ": duration " + text::format_double(s.duration_s) +
                       " s outside the 53-65 min range of the real corpus");
  }

  double prev = 0.0;
  for (const auto& ev : s.events) {
    if (ev.t < prev) throw DataError(who + ": gamepad timestamps decrease");
    if (ev.t > s.duration_s) throw DataError(who + ": gamepad event after session end");
    if (ev.pressed.size() > kMaxComboSize) throw DataError(who + ": more than 6 simultaneous actions");
    for (auto a : ev.pressed) {
      if (a >= kActionCount) throw DataError(who + ": action index outside vocabulary");
    }
    prev = ev.t;
  }

  const auto& tr = s.trace;
  if (tr.size() < 2 || tr.t.size() != tr.v.size()) throw DataError(who + ": trace needs at least 2 samples");
  for (std::size_t i = 1; i < tr.size(); ++i) {
    if (!(tr.t[i] > tr.t[i - 1])) throw DataError(who + ": trace timestamps must strictly increase");
  }
  if (tr.t.front() < 0.0) throw DataError(who + ": trace starts before session");
  const double tol = 1e-9 * std::max(1.0, s.duration_s);
  if (tr.t.back() * tr.speed_factor > s.duration_s + tol) {
    throw DataError(who + ": rescaled trace extends past session end");
  }

  const auto& f = s.features;
  if (f.data.size() != static_cast<std::size_t>(f.frame_count) * f.record_size()) {
    throw DataError(who + ": feature payload does not match its shape");
  }
  const double expected = f.fps * s.duration_s;
  if (std::abs(static_cast<double>(f.frame_count) - expected) > 1.0) {
    warnings.push_back(who + ": " + std::to_string(f.frame_count) + " frames, expected about " +
                       text::format_double(expected) + " (fps x duration)");
  }
  if (f.frame_count > 0 && f.timestamp(f.frame_count - 1) > s.duration_s + tol) {
    throw DataError(who + ": frame features extend past session end");
  }
  return warnings;
}

LoadedSession read_session(const fs::path& manifest_path, const ActionVocabulary& vocab) {
  const auto m = KeyValueConfig::load(manifest_path);
  const auto base = manifest_path.parent_path();
  auto resolve = [&](const std::string& key) {
    fs::path p = m.get_string(key);
    return p.is_absolute() ? p : base / p;
  };

  LoadedSession out;
  auto& s = out.session;
  s.participant_id = m.get_string("participant_id");
  s.duration_s = m.get_double("duration_s");
  const double speed = m.get_double("annotation_speed", 2.0);

  const auto gamepad = resolve("gamepad");
  const auto features = resolve("features");
  const auto trace = resolve("trace");
  for (const auto& p : {gamepad, features, trace}) {
    if (!fs::exists(p)) throw DataError("missing file: " + p.string() + " (referenced by " + manifest_path.string() + ")");
  }
  s.events = read_gamepad_log(gamepad, vocab);
  s.features = read_feature_file(features);
  s.trace = read_trace(trace, speed);
  out.warnings = validate_session(s);
  return out;
}

fs::path write_session(const Session& s, const fs::path& dir, const ActionVocabulary& vocab) {
  fs::create_directories(dir);
  write_gamepad_log(s.events, dir / "gamepad.log", vocab);
  write_feature_file(s.features, dir / "features.engfeat");
  write_trace(s.trace, dir / "trace.csv");

  KeyValueConfig m;
  m.set("participant_id", s.participant_id);
  m.set("gamepad", "gamepad.log");
  m.set("features", "features.engfeat");
  m.set("trace", "trace.csv");
  m.set("duration_s", text::format_double(s.duration_s));
  m.set("annotation_speed", text::format_double(s.trace.speed_factor));
  const auto manifest = dir / kManifestName;
  m.save(manifest);
  return manifest;
}

std::vector<fs::path> list_sessions(const fs::path& corpus_dir) {
  if (!fs::is_directory(corpus_dir)) throw DataError("corpus directory not found: " + corpus_dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(corpus_dir)) {
    if (!entry.is_directory()) continue;
    auto manifest = entry.path() / kManifestName;
    if (fs::exists(manifest)) out.push_back(manifest);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace engage::corpus
