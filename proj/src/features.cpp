#include "chg2cap/features.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "chg2cap/random.hpp"
#include "json.hpp"

namespace chg2cap {

void FeaturePair::validate() const {
  if (!f1.defined() || !f2.defined()) throw DimensionError("feature pair: undefined tensor");
  if (f1.rank() != 3 || f1.shape() != f2.shape()) {
    throw DimensionError("feature pair: expected two equal [h x w x C] maps, got " + shape_str(f1.shape()) +
                         " and " + shape_str(f2.shape()));
  }
  if (height() * width() < 2 || channels() < 2) {
    throw DimensionError("feature pair: need h*w >= 2 and C >= 2, got " + shape_str(f1.shape()));
  }
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::array<char, 4> kFeatureMagic{'C', 'G', 'F', 'T'};
constexpr std::size_t kFeatureHeaderBytes = 20;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::string_view in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

void put_f32(std::string& out, double value) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(value)));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string encode_feature_bytes(const FeaturePair& pair) {
  pair.validate();
  std::string out(kFeatureMagic.begin(), kFeatureMagic.end());
  put_u32(out, kFeatureFileVersion);
  put_u32(out, static_cast<std::uint32_t>(pair.height()));
  put_u32(out, static_cast<std::uint32_t>(pair.width()));
  put_u32(out, static_cast<std::uint32_t>(pair.channels()));
  for (double v : pair.f1.values()) put_f32(out, v);
  for (double v : pair.f2.values()) put_f32(out, v);
  return out;
}

FeaturePair decode_feature_bytes(std::string_view bytes) {
  using Kind = FeatureFormatError::Kind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kFeatureMagic.data(), 4) != 0) {
    throw FeatureFormatError(Kind::kBadMagic, "feature file: bad magic (expected CGFT)");
  }
  if (bytes.size() < kFeatureHeaderBytes) {
    throw FeatureFormatError(Kind::kTruncatedHeader, "feature file: truncated header (" +
                                                         std::to_string(bytes.size()) + " of " +
                                                         std::to_string(kFeatureHeaderBytes) + " bytes)");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kFeatureFileVersion) {
    throw FeatureFormatError(Kind::kBadVersion, "feature file: unsupported version " + std::to_string(version));
  }
  const std::size_t h = get_u32(bytes, 8), w = get_u32(bytes, 12), c = get_u32(bytes, 16);
  if (h == 0 || w == 0 || c == 0) {
    throw FeatureFormatError(Kind::kSizeMismatch, "feature file: zero dimension in header");
  }
  const std::size_t per_map = h * w * c;
  const std::size_t expected = kFeatureHeaderBytes + 2 * per_map * 4;
  if (bytes.size() < expected) {
    throw FeatureFormatError(Kind::kTruncatedPayload, "feature file: truncated payload, expected " +
                                                          std::to_string(expected) + " bytes, got " +
                                                          std::to_string(bytes.size()));
  }
  if (bytes.size() != expected) {
    throw FeatureFormatError(Kind::kSizeMismatch, "feature file: header dimensions imply " +
                                                      std::to_string(expected) + " bytes but file has " +
                                                      std::to_string(bytes.size()));
  }
  auto read_map = [&](std::size_t offset) {
    std::vector<double> data(per_map);
    for (std::size_t i = 0; i < per_map; ++i) {
      data[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes, offset + 4 * i)));
    }
    return Tensor(Shape{h, w, c}, std::move(data));
  };
  FeaturePair pair{read_map(kFeatureHeaderBytes), read_map(kFeatureHeaderBytes + per_map * 4)};
  pair.validate();
  return pair;
}

void write_feature_file(const std::filesystem::path& path, const FeaturePair& pair) {
  const std::string bytes = encode_feature_bytes(pair);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

FeaturePair load_feature_file(const std::filesystem::path& path) { return decode_feature_bytes(read_file(path)); }

// ---------------------------------------------------------------------------

std::string_view to_string(ChangeType type) {
  switch (type) {
    case ChangeType::kBuildHouses: return "build-houses";
    case ChangeType::kRemoveTrees: return "remove-trees";
    case ChangeType::kAddRoad: return "add-road";
    case ChangeType::kNoChange: return "no-change";
  }
  return "?";
}

std::string_view to_string(Quadrant quadrant) {
  switch (quadrant) {
    case Quadrant::kNorth: return "north";
    case Quadrant::kSouth: return "south";
    case Quadrant::kEast: return "east";
    case Quadrant::kWest: return "west";
  }
  return "?";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw DataError("unknown split '" + std::string(text) + "'");
}

bool in_quadrant(Quadrant q, std::size_t row, std::size_t col, std::size_t h, std::size_t w) {
  switch (q) {
    case Quadrant::kNorth: return row < h / 2;
    case Quadrant::kSouth: return row >= h / 2;
    case Quadrant::kWest: return col < w / 2;
    case Quadrant::kEast: return col >= w / 2;
  }
  return false;
}

std::pair<std::size_t, std::size_t> channel_band(ChangeType type, std::size_t channels) {
  if (type == ChangeType::kNoChange) return {0, 0};
  const std::size_t width = channels / 3;
  const auto k = static_cast<std::size_t>(type);
  return {k * width, (k + 1) * width};
}

std::vector<std::string> caption_templates(ChangeType type, Quadrant quadrant) {
  static const std::array<std::array<const char*, 5>, 4> kTemplates{{
      {"many houses are built in the {q}", "some buildings are constructed in the {q}",
       "new houses appear in the {q}", "several houses have been built in the {q}",
       "houses are built in the {q} of the scene"},
      {"trees are removed in the {q}", "some trees are cut down in the {q}", "the trees in the {q} disappear",
       "many trees have been removed in the {q}", "vegetation is cleared in the {q}"},
      {"a road is built in the {q}", "a new road appears in the {q}", "a road is constructed in the {q}",
       "there is a new road in the {q}", "a road has been added in the {q}"},
      {"the scene is unchanged", "there is no change", "nothing has changed",
       "no difference between the two images", "the two images look the same"},
  }};
  std::vector<std::string> out;
  for (const char* t : kTemplates[static_cast<std::size_t>(type)]) {
    std::string s(t);
    if (const auto pos = s.find("{q}"); pos != std::string::npos) s.replace(pos, 3, to_string(quadrant));
    out.push_back(std::move(s));
  }
  return out;
}

bool in_template_family(const Sentence& words, ChangeType type) {
  for (auto q : {Quadrant::kNorth, Quadrant::kSouth, Quadrant::kEast, Quadrant::kWest}) {
    for (const auto& t : caption_templates(type, q))
      if (tokenize(t) == words) return true;
  }
  return false;
}

std::vector<DatasetRecord> gen_synthetic(std::uint64_t seed, std::size_t count, const SyntheticConfig& cfg) {
  if (count == 0) throw ConfigError("gen_synthetic: count must be >= 1");
  if (cfg.height < 2 || cfg.width < 2 || cfg.channels < 3) {
    throw ConfigError("gen_synthetic: need h, w >= 2 and C >= 3");
  }
  if (cfg.captions_per_record < 1 || cfg.captions_per_record > 5) {
    throw ConfigError("gen_synthetic: captions_per_record must be in 1..5");
  }
  const std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(count)));
  const std::size_t n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(count)));
  if (n_val + n_test > count) throw ConfigError("gen_synthetic: split fractions exceed 1");
  const std::size_t n_train = count - n_val - n_test;

  Rng rng(seed);
  const std::size_t h = cfg.height, w = cfg.width, c = cfg.channels;
  std::vector<DatasetRecord> records;
  records.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    DatasetRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "syn%05zu", i);
    rec.id = id;
    const auto type = static_cast<ChangeType>(rng.below(4));
    const auto quadrant = static_cast<Quadrant>(rng.below(4));

    std::vector<double> f1(h * w * c);
    for (auto& v : f1) v = static_cast<double>(static_cast<float>(rng.normal()));
    std::vector<double> f2 = f1;
    if (type != ChangeType::kNoChange) {
      const auto [b0, b1] = channel_band(type, c);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          if (!in_quadrant(quadrant, y, x, h, w)) continue;
          for (std::size_t ch = b0; ch < b1; ++ch) {
            double& v = f2[(y * w + x) * c + ch];
            v = static_cast<double>(static_cast<float>(v + cfg.amplitude));
          }
        }
    }
    rec.features = FeaturePair{Tensor(Shape{h, w, c}, std::move(f1)), Tensor(Shape{h, w, c}, std::move(f2))};

    const auto templates = caption_templates(type, quadrant);
    for (std::size_t k = 0; k < cfg.captions_per_record; ++k) rec.captions.push_back(tokenize(templates[k]));
    rec.change = type;
    if (type != ChangeType::kNoChange) rec.quadrant = quadrant;
    rec.split = i < n_train ? Split::kTrain : (i < n_train + n_val ? Split::kVal : Split::kTest);
    records.push_back(std::move(rec));
  }
  return records;
}

// ---------------------------------------------------------------------------

std::vector<DatasetRecord> load_manifest(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw DataError("manifest " + path.string() + ": expected a JSON array");
  const auto base = path.parent_path();
  std::vector<DatasetRecord> records;
  for (const auto& entry : doc) {
    try {
      DatasetRecord rec;
      rec.id = entry.at("id").get<std::string>();
      const std::filesystem::path feature_file = entry.at("feature_file").get<std::string>();
      rec.features = load_feature_file(feature_file.is_absolute() ? feature_file : base / feature_file);
      for (const auto& c : entry.at("captions")) rec.captions.push_back(tokenize(c.get<std::string>()));
      if (rec.captions.empty()) throw DataError("record " + rec.id + " has no captions");
      rec.split = parse_split(entry.value("split", std::string("train")));
      records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest " + path.string() + ": " + e.what());
    }
  }
  return records;
}

std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<DatasetRecord>& records) {
  std::filesystem::create_directories(dir / "features");
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& rec : records) {
    const std::string rel = "features/" + rec.id + ".cgft";
    write_feature_file(dir / rel, rec.features);
    nlohmann::json captions = nlohmann::json::array();
    for (const auto& c : rec.captions) captions.push_back(join_words(c));
    doc.push_back({{"id", rec.id}, {"feature_file", rel}, {"captions", captions}, {"split", to_string(rec.split)}});
  }
  const auto manifest = dir / "manifest.json";
  std::ofstream out(manifest);
  if (!out) throw DataError("cannot write " + manifest.string());
  out << doc.dump(2) << '\n';
  return manifest;
}

std::vector<const DatasetRecord*> select_split(const std::vector<DatasetRecord>& records, Split split) {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(&r);
  return out;
}

// ---------------------------------------------------------------------------

Tensor toy_extract(const Tensor& image, const ToyExtractorConfig& cfg) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw DimensionError("toy_extract: expected [H x W x 3] image, got " + shape_str(image.shape()));
  }
  const std::size_t H = image.dim(0), W = image.dim(1);
  if (cfg.height == 0 || cfg.width == 0 || H % cfg.height != 0 || W % cfg.width != 0) {
    throw DimensionError("toy_extract: image " + shape_str(image.shape()) + " is not divisible into " +
                         std::to_string(cfg.height) + "x" + std::to_string(cfg.width) + " patches");
  }
  const std::size_t ph = H / cfg.height, pw = W / cfg.width, c = cfg.channels;

  Rng rng(cfg.seed);
  std::vector<double> proj(3 * c);
  for (auto& v : proj) v = rng.uniform(-1.0, 1.0);

  const auto& img = image.values();
  std::vector<double> out(cfg.height * cfg.width * c, 0.0);
  const double inv_area = 1.0 / static_cast<double>(ph * pw);
  for (std::size_t y = 0; y < cfg.height; ++y)
    for (std::size_t x = 0; x < cfg.width; ++x) {
      std::array<double, 3> mean{0.0, 0.0, 0.0};
      for (std::size_t dy = 0; dy < ph; ++dy)
        for (std::size_t dx = 0; dx < pw; ++dx)
          for (std::size_t k = 0; k < 3; ++k) mean[k] += img[((y * ph + dy) * W + (x * pw + dx)) * 3 + k];
      for (auto& m : mean) m *= inv_area;
      double* cell = &out[(y * cfg.width + x) * c];
      for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t ch = 0; ch < c; ++ch) cell[ch] += mean[k] * proj[k * c + ch];
    }
  return Tensor(Shape{cfg.height, cfg.width, c}, std::move(out));
}

FeaturePair toy_extract_pair(const Tensor& image1, const Tensor& image2, const ToyExtractorConfig& cfg) {
  if (image1.shape() != image2.shape()) {
    throw DimensionError("toy_extract_pair: image shapes differ " + shape_str(image1.shape()) + " vs " +
                         shape_str(image2.shape()));
  }
  return FeaturePair{toy_extract(image1, cfg), toy_extract(image2, cfg)};
}

}  // namespace chg2cap
