#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "chg2cap/error.hpp"
#include "chg2cap/tensor.hpp"
#include "chg2cap/vocab.hpp"

namespace chg2cap {

/// Bitemporal feature maps, each [h x w x C] with channels innermost.
struct FeaturePair {
  Tensor f1;
  Tensor f2;

  std::size_t height() const { return f1.dim(0); }
  std::size_t width() const { return f1.dim(1); }
  std::size_t channels() const { return f1.dim(2); }

  /// Throws DimensionError unless both maps are [h x w x C] with h*w >= 2, C >= 2.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Feature file: "CGFT", u32 version, u32 h, u32 w, u32 C, then the f1 and f2
// payloads as little-endian float32, spatial-major / channel-minor.

inline constexpr std::uint32_t kFeatureFileVersion = 1;

class FeatureFormatError : public DataError {
 public:
  enum class Kind { kBadMagic, kBadVersion, kTruncatedHeader, kTruncatedPayload, kSizeMismatch };
  FeatureFormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::string encode_feature_bytes(const FeaturePair& pair);
FeaturePair decode_feature_bytes(std::string_view bytes);
void write_feature_file(const std::filesystem::path& path, const FeaturePair& pair);
FeaturePair load_feature_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic change-captioning data.

enum class ChangeType { kBuildHouses = 0, kRemoveTrees = 1, kAddRoad = 2, kNoChange = 3 };
enum class Quadrant { kNorth = 0, kSouth = 1, kEast = 2, kWest = 3 };
enum class Split { kTrain, kVal, kTest };

std::string_view to_string(ChangeType type);
std::string_view to_string(Quadrant quadrant);
std::string_view to_string(Split split);
Split parse_split(std::string_view text);

/// Half-plane covered by a quadrant: north/south split rows at h/2,
/// west/east split columns at w/2.
bool in_quadrant(Quadrant q, std::size_t row, std::size_t col, std::size_t h, std::size_t w);

/// Channel band [first, second) that carries the signal of a change type.
std::pair<std::size_t, std::size_t> channel_band(ChangeType type, std::size_t channels);

/// The five paraphrases for a change type (quadrant substituted; ignored for no-change).
std::vector<std::string> caption_templates(ChangeType type, Quadrant quadrant);
/// True when `words` is one of the paraphrases of `type` for any quadrant.
bool in_template_family(const Sentence& words, ChangeType type);

struct DatasetRecord {
  std::string id;
  FeaturePair features;
  std::vector<Sentence> captions;
  Split split = Split::kTrain;
  std::optional<ChangeType> change;  // known for synthetic records
  std::optional<Quadrant> quadrant;
};

struct SyntheticConfig {
  std::size_t height = 4;
  std::size_t width = 4;
  std::size_t channels = 16;
  std::size_t captions_per_record = 5;  // 1..5
  double amplitude = 2.0;
  double val_fraction = 0.0;
  double test_fraction = 0.0;
};

/// Deterministic in `seed`. Features are rounded to float32 so that the
/// records survive a trip through the feature file format unchanged.
std::vector<DatasetRecord> gen_synthetic(std::uint64_t seed, std::size_t count, const SyntheticConfig& cfg = {});

// ---------------------------------------------------------------------------
// Manifest: JSON array of {"id", "feature_file", "captions", "split"}; feature
// paths are resolved relative to the manifest's directory.

std::vector<DatasetRecord> load_manifest(const std::filesystem::path& path);
/// Writes <dir>/features/<id>.cgft for every record plus <dir>/manifest.json.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<DatasetRecord>& records);

std::vector<const DatasetRecord*> select_split(const std::vector<DatasetRecord>& records, Split split);

// ---------------------------------------------------------------------------
// Stand-in for a pretrained backbone: patch means followed by a fixed random
// 3 -> C projection shared by both temporal images.

struct ToyExtractorConfig {
  std::size_t height = 4;
  std::size_t width = 4;
  std::size_t channels = 16;
  std::uint64_t seed = 1234;
};

Tensor toy_extract(const Tensor& image, const ToyExtractorConfig& cfg);
FeaturePair toy_extract_pair(const Tensor& image1, const Tensor& image2, const ToyExtractorConfig& cfg);

}  // namespace chg2cap
