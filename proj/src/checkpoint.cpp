#include "chg2cap/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "chg2cap/error.hpp"

namespace chg2cap {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw DataError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out = "CGCK";
  put<std::uint32_t>(out, kCheckpointVersion);
  const nlohmann::json meta{{"config", to_json(ckpt.config)},
                            {"epoch", ckpt.epoch},
                            {"best_bleu4", ckpt.best_bleu4},
                            {"vocab", ckpt.vocab.corpus_words()}};
  const std::string blob = meta.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(blob.size()));
  out += blob;
  for (const auto& p : ckpt.model.named_parameters()) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : p.tensor.values()) put<double>(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != "CGCK") throw DataError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto blob_len = r.get<std::uint32_t>("config length");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.take(blob_len, "config"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint config blob: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config = train_config_from_json(meta.at("config"));
    ckpt.epoch = meta.at("epoch").get<std::size_t>();
    ckpt.best_bleu4 = meta.at("best_bleu4").get<double>();
    ckpt.vocab = Vocabulary::from_words(meta.at("vocab").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  }
  if (ckpt.config.model.vocab_size != ckpt.vocab.size()) {
    throw ConfigError("checkpoint vocab_size " + std::to_string(ckpt.config.model.vocab_size) +
                      " disagrees with its vocabulary of " + std::to_string(ckpt.vocab.size()));
  }

  ParameterList stored;
  while (!r.done()) {
    const auto name_len = r.get<std::uint16_t>("name length");
    std::string name = r.take(name_len, "name");
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape;
    for (std::uint8_t i = 0; i < rank; ++i) shape.push_back(r.get<std::uint32_t>("dims"));
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = r.get<double>("payload");
    stored.push_back({std::move(name), Tensor(shape, std::move(data))});
  }
  ckpt.model = Model::init(ckpt.config.model, 0);
  assign_parameters(ckpt.model, stored);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  const auto bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

void assign_parameters(Model& model, const ParameterList& source) {
  std::map<std::string, Tensor> by_name;
  for (const auto& p : source) by_name.emplace(p.name, p.tensor);
  const auto targets = model.named_parameters();
  if (targets.size() != by_name.size()) {
    throw ConfigError("parameter set mismatch: model has " + std::to_string(targets.size()) + " tensors, source has " +
                      std::to_string(by_name.size()));
  }
  for (const auto& t : targets) {
    const auto it = by_name.find(t.name);
    if (it == by_name.end()) throw ConfigError("parameter " + t.name + " missing from source");
    if (it->second.shape() != t.tensor.shape()) {
      throw ConfigError("parameter " + t.name + " has shape " + shape_str(it->second.shape()) + ", model expects " +
                        shape_str(t.tensor.shape()));
    }
    Tensor dst = t.tensor;
    std::copy(it->second.values().begin(), it->second.values().end(), dst.data().begin());
  }
}

Model clone_model(const Model& model) {
  Model copy = Model::init(model.config, 0);
  assign_parameters(copy, model.named_parameters());
  return copy;
}

}  // namespace chg2cap
