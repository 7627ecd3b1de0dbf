#include <bit>
#include <cstring>
#include <fstream>

#include "fewfed/error.hpp"
#include "fewfed/model.hpp"

namespace fewfed {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr const char* kFormat = "fewfed-checkpoint";
constexpr int kFormatVersion = 1;

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const ModelParams& params = checkpoint.params;
  json header{{"format", kFormat},
              {"version", kFormatVersion},
              {"config", params.config.to_json()},
              {"param_count", params.flat.size()},
              {"vocab", checkpoint.vocab.tokens()},
              {"extra", checkpoint.extra}};
  const std::string text = header.dump();
  const std::uint64_t length = text.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(&length), sizeof length);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<float> values(params.flat.begin(), params.flat.end());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  if (!in || length > (1u << 30)) throw ValidationError("checkpoint header is corrupt: " + path.string());
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint header is not JSON: " + std::string(e.what()));
  }
  if (header.value("format", "") != kFormat || header.value("version", 0) != kFormatVersion)
    throw ValidationError("unsupported checkpoint format in " + path.string());

  Checkpoint out;
  out.params = ModelParams::zeros(ModelConfig::from_json(header.at("config")));
  if (header.at("param_count").get<std::size_t>() != out.params.flat.size())
    throw ValidationError("checkpoint parameter count does not match its config");
  std::vector<float> values(out.params.flat.size());
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!in) throw ValidationError("checkpoint is truncated: " + path.string());
  std::copy(values.begin(), values.end(), out.params.flat.begin());
  out.vocab = Vocab(header.at("vocab").get<std::vector<std::string>>());
  if (out.vocab.size() != out.params.config.vocab_size)
    throw ValidationError("checkpoint vocabulary does not match vocab_size");
  out.extra = header.value("extra", json::object());
  return out;
}

}  // namespace fewfed
