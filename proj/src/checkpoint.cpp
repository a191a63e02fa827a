#include "dkd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace dkd {

namespace {

constexpr char kMagic[4] = {'D', 'K', 'D', 'C'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_bytes(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t offset() const noexcept { return pos_; }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated checkpoint while reading ") + what, pos_);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    return static_cast<std::uint32_t>(s[0]) | static_cast<std::uint32_t>(s[1]) << 8 |
           static_cast<std::uint32_t>(s[2]) << 16 | static_cast<std::uint32_t>(s[3]) << 24;
  }

  std::string text(const char* what) {
    const std::uint32_t n = u32(what);
    auto s = take(n, what);
    return std::string(s.begin(), s.end());
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelGraph<float>& model, const CheckpointMetadata& metadata) {
  const nlohmann::json descriptor = {
      {"architecture", model.architecture_json()},
      {"metadata", {{"epoch", metadata.epoch}, {"seed", metadata.seed}, {"metrics", metadata.metrics}}}};
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  put_bytes(out, descriptor.dump());
  put_u32(out, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    put_bytes(out, p.name);
    put_u32(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : p.tensor.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  auto magic = in.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad checkpoint magic, expected \"DKDC\"", 0);
  const std::uint64_t version_at = in.offset();
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion),
                      version_at);
  }
  const std::uint64_t descriptor_at = in.offset();
  const std::string text = in.text("descriptor");
  nlohmann::json descriptor;
  ModelGraph<float> model;
  CheckpointMetadata meta;
  try {
    descriptor = nlohmann::json::parse(text);
    model = ModelGraph<float>::from_architecture_json(descriptor.at("architecture"));
    const auto& m = descriptor.at("metadata");
    meta.epoch = m.at("epoch").get<std::uint64_t>();
    meta.seed = m.at("seed").get<std::uint64_t>();
    meta.metrics = m.at("metrics");
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("invalid checkpoint descriptor: ") + e.what(), descriptor_at);
  }

  const std::uint64_t count_at = in.offset();
  const std::uint32_t count = in.u32("array count");
  if (count != model.params().size()) {
    throw FormatError("checkpoint stores " + std::to_string(count) + " arrays but the architecture has " +
                          std::to_string(model.params().size()),
                      count_at);
  }
  for (auto& p : model.params()) {
    const std::uint64_t at = in.offset();
    const std::string name = in.text("array name");
    if (name != p.name) throw FormatError("expected array '" + p.name + "', found '" + name + "'", at);
    const std::uint32_t rank = in.u32("array rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(in.u32("array dims"));
    if (shape != p.tensor.shape()) {
      throw FormatError("array '" + name + "' has shape " + shape_string(shape) + ", architecture expects " +
                            shape_string(p.tensor.shape()),
                        at);
    }
    for (float& v : p.tensor.values()) v = std::bit_cast<float>(in.u32("array payload"));
  }
  if (!in.done()) throw FormatError("trailing bytes after the last array", in.offset());
  return Checkpoint{std::move(model), std::move(meta)};
}

void save_checkpoint(const ModelGraph<float>& model, const CheckpointMetadata& metadata,
                     const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model, metadata);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace dkd
