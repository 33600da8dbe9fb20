#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace engage::corpus {

inline constexpr std::size_t kActionCount = 25;
inline constexpr std::size_t kMaxComboSize = 6;

/// The 25 gamepad action names. Position in the list is the feature index.
class ActionVocabulary {
 public:
  explicit ActionVocabulary(std::vector<std::string> names);

  /// Canonical Xbox-controller vocabulary used by this corpus.
  static const ActionVocabulary& standard();

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t index) const { return names_.at(index); }
  std::optional<std::size_t> index_of(std::string_view name) const;
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
};

/// One logger record. An empty `pressed` list is an explicit "no key" poll.
struct GamepadEvent {
  double t = 0.0;
  std::vector<std::uint8_t> pressed;  // vocabulary indices, ascending, unique

  bool operator==(const GamepadEvent&) const = default;
};

/// Raw annotation trace, timestamps in annotation time (the annotator watched
/// at `speed_factor` times real speed).
struct EngagementTrace {
  std::vector<double> t;
  std::vector<double> v;
  double speed_factor = 2.0;

  std::size_t size() const { return t.size(); }
  bool operator==(const EngagementTrace&) const = default;
};

enum class FrameLayout : std::uint32_t { kMaps = 1, kVectors = 2 };

/// Per-frame backbone outputs. Record i has timestamp i / fps and occupies
/// channels*height*width consecutive floats (row-major C, H, W).
struct FrameFeatureStream {
  FrameLayout layout = FrameLayout::kVectors;
  std::uint32_t channels = 512;
  std::uint32_t height = 1;
  std::uint32_t width = 1;
  double fps = 3.0;
  std::uint32_t frame_count = 0;
  std::vector<float> data;

  std::size_t record_size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  std::span<const float> record(std::size_t i) const {
    return std::span<const float>(data).subspan(i * record_size(), record_size());
  }
  double timestamp(std::size_t i) const { return static_cast<double>(i) / fps; }

  bool operator==(const FrameFeatureStream&) const = default;
};

struct Session {
  std::string participant_id;
  double duration_s = 0.0;
  std::vector<GamepadEvent> events;
  FrameFeatureStream features;
  EngagementTrace trace;
};

/// A parsed session plus non-fatal findings (duration outside the corpus
/// range, frame count drifting from fps * duration).
struct LoadedSession {
  Session session;
  std::vector<std::string> warnings;
};

// Gamepad log: one `t<TAB>a+b+c` record per line, `nokey` for an empty poll.
std::vector<GamepadEvent> read_gamepad_log(const std::filesystem::path& path,
                                           const ActionVocabulary& vocab = ActionVocabulary::standard());
std::vector<GamepadEvent> parse_gamepad_log(std::string_view text, const std::string& origin,
                                            const ActionVocabulary& vocab = ActionVocabulary::standard());
void write_gamepad_log(const std::vector<GamepadEvent>& events, const std::filesystem::path& path,
                       const ActionVocabulary& vocab = ActionVocabulary::standard());

// Trace: CSV with header `t,v`.
EngagementTrace read_trace(const std::filesystem::path& path, double speed_factor);
void write_trace(const EngagementTrace& trace, const std::filesystem::path& path);

// ENGFEAT1 container:
//   bytes 0..7   magic "ENGFEAT1"
//   u32 layout (1 = MAPS, 2 = VECTORS), u32 frame count, u32 C, u32 H, u32 W
//   f64 fps
//   frame_count * C * H * W little-endian f32, row-major
inline constexpr std::size_t kFeatureHeaderBytes = 8 + 5 * 4 + 8;
void write_feature_file(const FrameFeatureStream& stream, const std::filesystem::path& path);
FrameFeatureStream read_feature_file(const std::filesystem::path& path);
std::vector<char> encode_feature_file(const FrameFeatureStream& stream);
FrameFeatureStream decode_feature_file(std::span<const char> bytes, const std::string& origin);

/// Throws DataError on a hard invariant violation; returns warnings otherwise.
std::vector<std::string> validate_session(const Session& session);

/// Reads a manifest (`participant_id`, `gamepad`, `features`, `trace`,
/// `duration_s`, `annotation_speed`); file paths resolve against the
/// manifest's directory.
LoadedSession read_session(const std::filesystem::path& manifest_path,
                           const ActionVocabulary& vocab = ActionVocabulary::standard());

/// Writes the four session files into `dir` and returns the manifest path.
std::filesystem::path write_session(const Session& session, const std::filesystem::path& dir,
                                    const ActionVocabulary& vocab = ActionVocabulary::standard());

inline constexpr const char* kManifestName = "session.manifest";

/// Manifests of every immediate subdirectory holding one, sorted by path.
std::vector<std::filesystem::path> list_sessions(const std::filesystem::path& corpus_dir);

}  // namespace engage::corpus
