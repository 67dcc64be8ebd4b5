#include "factsum/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "factsum/error.hpp"

namespace factsum {
namespace {

constexpr char kMagic[8] = {'F', 'A', 'C', 'T', 'S', 'U', 'M', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error(ErrorKind::kInvalidInput, "checkpoint truncated");
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  pos += sizeof(T);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const ad::Parameter* p : ckpt.params.list()) {
    tensors.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  }
  nlohmann::json header = {{"config", to_json(ckpt.config)},
                           {"mode", std::string(to_string(ckpt.mode))},
                           {"vocab", ckpt.vocab.tokens()},
                           {"info", ckpt.info},
                           {"tensors", tensors}};
  std::string head = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint64_t>(out, head.size());
  out += head;
  for (const ad::Parameter* p : ckpt.params.list()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) put_le<double>(out, p->value.data()[i]);
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << f.rdbuf();
  const std::string in = buf.str();

  if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::kInvalidInput, path.string() + ": not a factsum checkpoint");
  }
  std::size_t pos = sizeof(kMagic);
  auto version = get_le<std::uint32_t>(in, pos);
  if (version != kVersion) {
    throw Error(ErrorKind::kInvalidInput,
                path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  auto head_len = get_le<std::uint64_t>(in, pos);
  if (pos + head_len > in.size()) throw Error(ErrorKind::kInvalidInput, "checkpoint truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.substr(pos, head_len));
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::kInvalidInput, path.string() + ": corrupt checkpoint header");
  }
  pos += head_len;

  Checkpoint ckpt;
  try {
    ckpt.config = model_config_from_json(header.at("config"));
    ckpt.config.validate();
    ckpt.mode = parse_guidance_mode(header.at("mode").get<std::string>());
    ckpt.vocab = Vocabulary::from_tokens(header.at("vocab").get<std::vector<std::string>>());
    ckpt.info = header.value("info", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, path.string() + ": " + e.what());
  }
  if (ckpt.vocab.size() != ckpt.config.vocab_size) {
    throw Error(ErrorKind::kInvalidInput, path.string() + ": vocabulary size does not match config");
  }
  ckpt.params = ModelParameters::zeros(ckpt.config);
  const nlohmann::json& table = header.at("tensors");
  std::vector<ad::Parameter*> params = ckpt.params.list();
  if (table.size() != params.size()) {
    throw Error(ErrorKind::kInvalidInput, path.string() + ": tensor count does not match config");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = *params[i];
    const nlohmann::json& entry = table[i];
    if (entry.at("name").get<std::string>() != p.name ||
        entry.at("rows").get<Eigen::Index>() != p.value.rows() ||
        entry.at("cols").get<Eigen::Index>() != p.value.cols()) {
      throw Error(ErrorKind::kInvalidInput,
                  path.string() + ": tensor " + p.name + " has unexpected name or shape");
    }
  }
  for (ad::Parameter* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = get_le<double>(in, pos);
  }
  if (pos != in.size()) throw Error(ErrorKind::kInvalidInput, path.string() + ": trailing bytes");
  return ckpt;
}

}  // namespace factsum
